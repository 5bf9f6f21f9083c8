//! The shared configuration text format.
//!
//! UTF-8, line oriented:
//!
//! ```text
//! # comment
//! [section]
//! key = value
//! ```
//!
//! Keys are unique within a section and sections are unique within a
//! document. Values are raw strings; typed access goes through
//! [`SectionReader`], which also rejects keys nobody asked for. Floats are
//! written in shortest round-trip form so write → parse is exact.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::kinematics::{CameraModel, ChainConfig};
use crate::render::RenderStyle;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Section {
    pub name: String,
    pub entries: Vec<Entry>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Entry {
    pub key: String,
    pub value: String,
    pub line: usize,
}

impl Section {
    pub fn new(name: &str) -> Self {
        Self { name: name.to_string(), entries: Vec::new() }
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|e| e.key == key).map(|e| e.value.as_str())
    }

    /// Appends (or replaces) `key`.
    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let value = value.to_string();
        match self.entries.iter_mut().find(|e| e.key == key) {
            Some(e) => e.value = value,
            None => self.entries.push(Entry { key: key.to_string(), value, line: 0 }),
        }
        self
    }

    pub fn set_f64(&mut self, key: &str, v: f64) -> &mut Self {
        self.set(key, fmt_f64(v))
    }

    pub fn set_list(&mut self, key: &str, v: &[f64]) -> &mut Self {
        self.set(key, v.iter().map(|x| fmt_f64(*x)).collect::<Vec<_>>().join(", "))
    }

    pub fn reader(&self) -> SectionReader<'_> {
        SectionReader { section: self, used: vec![false; self.entries.len()] }
    }
}

/// A parsed document: ordered sections.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConfigDoc {
    pub sections: Vec<Section>,
}

impl ConfigDoc {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut doc = ConfigDoc::new();
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(rest) = line.strip_prefix('[') {
                let name = rest
                    .strip_suffix(']')
                    .ok_or_else(|| Error::Parse { line: line_no, msg: "unterminated section header".into() })?
                    .trim();
                if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-' || c == '.') {
                    return Err(Error::Parse { line: line_no, msg: format!("invalid section name {name:?}") });
                }
                if doc.section(name).is_some() {
                    return Err(Error::Parse { line: line_no, msg: format!("duplicate section [{name}]") });
                }
                doc.sections.push(Section::new(name));
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Parse { line: line_no, msg: "expected `key = value`".into() })?;
            let key = key.trim();
            if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_' || c == '-') {
                return Err(Error::Parse { line: line_no, msg: format!("invalid key {key:?}") });
            }
            let section = doc
                .sections
                .last_mut()
                .ok_or_else(|| Error::Parse { line: line_no, msg: "key outside of any section".into() })?;
            if section.get(key).is_some() {
                return Err(Error::Parse { line: line_no, msg: format!("duplicate key {key:?}") });
            }
            section.entries.push(Entry { key: key.to_string(), value: value.trim().to_string(), line: line_no });
        }
        Ok(doc)
    }

    pub fn section(&self, name: &str) -> Option<&Section> {
        self.sections.iter().find(|s| s.name == name)
    }

    pub fn require(&self, name: &str) -> Result<&Section> {
        self.section(name).ok_or_else(|| Error::InvalidConfig(format!("missing section [{name}]")))
    }

    pub fn push(&mut self, section: Section) {
        self.sections.retain(|s| s.name != section.name);
        self.sections.push(section);
    }

    /// Fails if any section name is not in `allowed`.
    pub fn reject_unknown_sections(&self, allowed: &[&str]) -> Result<()> {
        match self.sections.iter().find(|s| !allowed.contains(&s.name.as_str())) {
            Some(s) => Err(Error::InvalidConfig(format!("unknown section [{}]", s.name))),
            None => Ok(()),
        }
    }
}

impl std::fmt::Display for ConfigDoc {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        for (i, s) in self.sections.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            writeln!(f, "[{}]", s.name)?;
            for e in &s.entries {
                writeln!(f, "{} = {}", e.key, e.value)?;
            }
        }
        Ok(())
    }
}

/// Shortest representation that parses back to the same `f64`.
pub fn fmt_f64(v: f64) -> String {
    let mut s = String::new();
    write!(s, "{v:?}").unwrap();
    s
}

/// Typed, consumption-tracking view of a section.
pub struct SectionReader<'a> {
    section: &'a Section,
    used: Vec<bool>,
}

impl<'a> SectionReader<'a> {
    fn raw(&mut self, key: &str) -> Option<(&'a str, usize)> {
        let idx = self.section.entries.iter().position(|e| e.key == key)?;
        self.used[idx] = true;
        let e = &self.section.entries[idx];
        Some((e.value.as_str(), e.line))
    }

    fn err(&self, key: &str, line: usize, msg: impl std::fmt::Display) -> Error {
        Error::Parse { line, msg: format!("[{}] {key}: {msg}", self.section.name) }
    }

    pub fn opt<T: FromStr>(&mut self, key: &str) -> Result<Option<T>>
    where
        T::Err: std::fmt::Display,
    {
        match self.raw(key) {
            None => Ok(None),
            Some((v, line)) => v.parse::<T>().map(Some).map_err(|e| self.err(key, line, e)),
        }
    }

    pub fn get<T: FromStr>(&mut self, key: &str) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        self.opt(key)?
            .ok_or_else(|| Error::InvalidConfig(format!("[{}] missing key {key:?}", self.section.name)))
    }

    pub fn or<T: FromStr>(&mut self, key: &str, default: T) -> Result<T>
    where
        T::Err: std::fmt::Display,
    {
        Ok(self.opt(key)?.unwrap_or(default))
    }

    pub fn list_opt<T: FromStr>(&mut self, key: &str) -> Result<Option<Vec<T>>>
    where
        T::Err: std::fmt::Display,
    {
        let Some((v, line)) = self.raw(key) else { return Ok(None) };
        if v.trim().is_empty() {
            return Ok(Some(Vec::new()));
        }
        v.split(',')
            .map(|item| item.trim().parse::<T>().map_err(|e| self.err(key, line, e)))
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    pub fn list<T: FromStr>(&mut self, key: &str) -> Result<Vec<T>>
    where
        T::Err: std::fmt::Display,
    {
        self.list_opt(key)?
            .ok_or_else(|| Error::InvalidConfig(format!("[{}] missing key {key:?}", self.section.name)))
    }

    /// Errors on any key that was never read.
    pub fn finish(self) -> Result<()> {
        match self.used.iter().position(|u| !u) {
            Some(i) => {
                let e = &self.section.entries[i];
                Err(Error::Parse { line: e.line, msg: format!("[{}] unknown key {:?}", self.section.name, e.key) })
            }
            None => Ok(()),
        }
    }
}

pub fn chain_to_section(cfg: &ChainConfig) -> Section {
    let mut s = Section::new("chain");
    s.set("n_joints", cfg.n_joints());
    s.set_list("link_lengths", &cfg.link_lengths);
    s.set_list("link_radii", &cfg.link_radii);
    s.set(
        "joint_limits",
        cfg.joint_limits.iter().map(|(lo, hi)| format!("{}:{}", fmt_f64(*lo), fmt_f64(*hi))).collect::<Vec<_>>().join(", "),
    );
    s.set_list("base_position", &cfg.base_position);
    s.set_f64("base_angle", cfg.base_angle);
    s
}

pub fn chain_from_section(s: &Section) -> Result<ChainConfig> {
    let mut r = s.reader();
    let n: usize = r.get("n_joints")?;
    let lengths: Vec<f64> = r.list("link_lengths")?;
    let radii: Vec<f64> = r.list("link_radii")?;
    let limits_raw: Vec<String> = r.list("joint_limits")?;
    let base: Vec<f64> = r.list("base_position")?;
    let base_angle: f64 = r.get("base_angle")?;
    r.finish()?;
    let limits = limits_raw
        .iter()
        .map(|p| {
            let (lo, hi) = p.split_once(':').ok_or_else(|| Error::InvalidConfig(format!("bad joint limit {p:?}")))?;
            let lo: f64 = lo.trim().parse().map_err(|_| Error::InvalidConfig(format!("bad joint limit {p:?}")))?;
            let hi: f64 = hi.trim().parse().map_err(|_| Error::InvalidConfig(format!("bad joint limit {p:?}")))?;
            Ok((lo, hi))
        })
        .collect::<Result<Vec<_>>>()?;
    if lengths.len() != n {
        return Err(Error::InvalidConfig(format!("n_joints = {n} but {} link lengths", lengths.len())));
    }
    if base.len() != 2 {
        return Err(Error::InvalidConfig("base_position needs two values".into()));
    }
    ChainConfig::new(lengths, radii, limits, [base[0], base[1]], base_angle)
}

pub fn camera_to_section(cam: &CameraModel) -> Section {
    let mut s = Section::new("camera");
    s.set_f64("scale", cam.scale);
    s.set_list("offset", &cam.offset);
    s.set("height", cam.height);
    s.set("width", cam.width);
    s
}

pub fn camera_from_section(s: &Section) -> Result<CameraModel> {
    let mut r = s.reader();
    let scale = r.get("scale")?;
    let offset: Vec<f64> = r.list("offset")?;
    let height = r.get("height")?;
    let width = r.get("width")?;
    r.finish()?;
    if offset.len() != 2 {
        return Err(Error::InvalidConfig("camera offset needs two values".into()));
    }
    CameraModel::new(scale, [offset[0], offset[1]], height, width)
}

pub fn style_to_section(style: &RenderStyle) -> Section {
    let mut s = Section::new("style");
    s.set_list("link_intensity", &style.link_intensity);
    s.set_f64("radial_shading_gain", style.radial_shading_gain);
    s.set_f64("background", style.background);
    s.set("supersample", style.supersample);
    s.set("channels", style.channels);
    s
}

pub fn style_from_section(s: &Section) -> Result<RenderStyle> {
    let mut r = s.reader();
    let style = RenderStyle {
        link_intensity: r.list("link_intensity")?,
        radial_shading_gain: r.get("radial_shading_gain")?,
        background: r.get("background")?,
        supersample: r.get("supersample")?,
        channels: r.get("channels")?,
    };
    r.finish()?;
    style.validate(style.link_intensity.len())?;
    Ok(style)
}
