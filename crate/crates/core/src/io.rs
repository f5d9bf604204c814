//! On-disk formats: motion files, condition files and dataset directories.
//!
//! Motion file (`.gdmo`), little-endian: magic `GDMO`, `u32` version 1, `u32`
//! frames, `u32` joints, `u32` channels (`J·6 + 3`), `f32` fps, then
//! `frames · channels` `f64` values, frame-major. Values are `f64` so gradient
//! checks on imported data stay meaningful.
//!
//! Condition file (`.cond`): magic `GDCD`, `u32` version 1, `u32` style,
//! `u32` frames, then the beat track as `f64`.

use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::motion::{channels_for, MotionSeq};
use crate::net::ClipCondition;
use crate::skeleton::Skeleton;

pub const MOTION_MAGIC: &[u8; 4] = b"GDMO";
pub const COND_MAGIC: &[u8; 4] = b"GDCD";
pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.txt";
pub const SKELETON_FILE: &str = "skeleton.txt";

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Format(format!("truncated {}", self.what)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn header(&mut self, magic: &[u8; 4]) -> Result<()> {
        if self.take(4)? != magic {
            return Err(Error::Format(format!("bad {} magic", self.what)));
        }
        let v = self.u32()?;
        if v != FORMAT_VERSION {
            return Err(Error::Format(format!("unsupported {} version {v}", self.what)));
        }
        Ok(())
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>> {
        let len = n.checked_mul(8).ok_or_else(|| Error::Format(format!("oversized {}", self.what)))?;
        Ok(self.take(len)?.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
    }

    fn finish(&self) -> Result<()> {
        if self.pos != self.bytes.len() {
            return Err(Error::Format(format!("trailing bytes in {}", self.what)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MotionFile {
    pub motion: MotionSeq,
    pub fps: f32,
}

impl MotionFile {
    pub fn to_bytes(&self) -> Vec<u8> {
        let m = &self.motion;
        let mut out = Vec::with_capacity(24 + m.data().len() * 8);
        out.extend_from_slice(MOTION_MAGIC);
        for v in [FORMAT_VERSION, m.frames() as u32, m.joints() as u32, m.channels() as u32] {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out.extend_from_slice(&self.fps.to_le_bytes());
        for v in m.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0, what: "motion file" };
        r.header(MOTION_MAGIC)?;
        let frames = r.u32()? as usize;
        let joints = r.u32()? as usize;
        let channels = r.u32()? as usize;
        if channels != channels_for(joints) {
            return Err(Error::Format(format!("{channels} channels for {joints} joints")));
        }
        let fps = f32::from_le_bytes(r.take(4)?.try_into().unwrap());
        let data = r.f64s(frames * channels)?;
        r.finish()?;
        Ok(MotionFile { motion: MotionSeq::from_data(frames, joints, data)?, fps })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        MotionFile::from_bytes(&fs::read(path)?)
    }
}

pub fn condition_to_bytes(c: &ClipCondition) -> Vec<u8> {
    let mut out = Vec::with_capacity(16 + c.beat_track.len() * 8);
    out.extend_from_slice(COND_MAGIC);
    for v in [FORMAT_VERSION, c.style as u32, c.beat_track.len() as u32] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    for v in &c.beat_track {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn condition_from_bytes(bytes: &[u8]) -> Result<ClipCondition> {
    let mut r = Reader { bytes, pos: 0, what: "condition file" };
    r.header(COND_MAGIC)?;
    let style = r.u32()? as usize;
    let frames = r.u32()? as usize;
    let beat_track = r.f64s(frames)?;
    r.finish()?;
    Ok(ClipCondition { style, beat_track })
}

pub fn save_condition(path: &Path, c: &ClipCondition) -> Result<()> {
    fs::write(path, condition_to_bytes(c))?;
    Ok(())
}

pub fn load_condition(path: &Path) -> Result<ClipCondition> {
    condition_from_bytes(&fs::read(path)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
}

/// One manifest line: `name style seed period split`.
#[derive(Clone, Debug, PartialEq)]
pub struct ManifestRow {
    pub name: String,
    pub style: usize,
    pub seed: u64,
    pub period: usize,
    pub split: Split,
}

/// Manifest metadata lines (`#key value...`) plus clip rows.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    pub fps: f64,
    pub hand_joints: Vec<usize>,
    pub n_styles: usize,
    pub rows: Vec<ManifestRow>,
}

impl Manifest {
    pub fn to_text(&self) -> String {
        let hands: Vec<String> = self.hand_joints.iter().map(|h| h.to_string()).collect();
        let mut s = format!("#fps {}\n#styles {}\n#hands {}\n", self.fps, self.n_styles, hands.join(" "));
        s.push_str("# clip style seed period split\n");
        for r in &self.rows {
            let split = if r.split == Split::Train { "train" } else { "val" };
            s.push_str(&format!("{} {} {} {} {split}\n", r.name, r.style, r.seed, r.period));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut m = Manifest::default();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            let bad = |msg: &str| Error::Parse { line: i + 1, msg: msg.to_string() };
            if line.is_empty() || line.starts_with("# ") {
                continue;
            }
            let mut it = line.split_whitespace();
            let key = it.next().unwrap_or_default();
            let num = |s: Option<&str>| s.and_then(|v| v.parse::<u64>().ok()).ok_or_else(|| bad("expected an integer"));
            match key {
                "#fps" => m.fps = it.next().and_then(|v| v.parse().ok()).ok_or_else(|| bad("bad fps"))?,
                "#styles" => m.n_styles = num(it.next())? as usize,
                "#hands" => m.hand_joints = it.map(|v| num(Some(v)).map(|n| n as usize)).collect::<Result<_>>()?,
                k if k.starts_with('#') => return Err(bad("unknown manifest key")),
                name => {
                    let style = num(it.next())? as usize;
                    let seed = num(it.next())?;
                    let period = num(it.next())? as usize;
                    let split = match it.next() {
                        Some("train") => Split::Train,
                        Some("val") => Split::Val,
                        _ => return Err(bad("split must be `train` or `val`")),
                    };
                    m.rows.push(ManifestRow { name: name.to_string(), style, seed, period, split });
                }
            }
        }
        Ok(m)
    }
}

/// A clip with its condition, as stored in a dataset or sample directory.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredClip {
    pub name: String,
    pub motion: MotionSeq,
    pub cond: Option<ClipCondition>,
}

pub fn clip_paths(dir: &Path, name: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{name}.gdmo")), dir.join(format!("{name}.cond")))
}

pub fn write_clip(dir: &Path, name: &str, motion: &MotionSeq, cond: Option<&ClipCondition>, fps: f64) -> Result<()> {
    let (m, c) = clip_paths(dir, name);
    MotionFile { motion: motion.clone(), fps: fps as f32 }.save(&m)?;
    if let Some(cond) = cond {
        save_condition(&c, cond)?;
    }
    Ok(())
}

/// Every `.gdmo` file in `dir` (sorted by name) with its `.cond` sibling if present.
pub fn read_clips(dir: &Path) -> Result<Vec<StoredClip>> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter_map(|e| {
            let p = e.path();
            (p.extension()? == "gdmo").then(|| p.file_stem()?.to_str().map(str::to_string))?
        })
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|name| {
            let (m, c) = clip_paths(dir, &name);
            let motion = MotionFile::load(&m)?.motion;
            let cond = if c.exists() { Some(load_condition(&c)?) } else { None };
            Ok(StoredClip { name, motion, cond })
        })
        .collect()
}

/// A dataset directory: skeleton, manifest and clip files.
#[derive(Clone, Debug)]
pub struct DatasetDir {
    pub skeleton: Skeleton,
    pub manifest: Manifest,
    pub train: Vec<(MotionSeq, ClipCondition)>,
    pub val: Vec<(MotionSeq, ClipCondition)>,
}

pub fn read_dataset(dir: &Path) -> Result<DatasetDir> {
    let skeleton = Skeleton::parse(&fs::read_to_string(dir.join(SKELETON_FILE))?)?;
    let manifest = Manifest::parse(&fs::read_to_string(dir.join(MANIFEST))?)?;
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for row in &manifest.rows {
        let (m, c) = clip_paths(dir, &row.name);
        let motion = MotionFile::load(&m)?.motion;
        if motion.joints() != skeleton.len() {
            return Err(Error::Format(format!(
                "{} has {} joints, skeleton {}",
                row.name,
                motion.joints(),
                skeleton.len()
            )));
        }
        let cond = load_condition(&c)?;
        if cond.beat_track.len() != motion.frames() {
            return Err(Error::Format(format!("{}: condition length differs from motion", row.name)));
        }
        let dst = if row.split == Split::Train { &mut train } else { &mut val };
        dst.push((motion, cond));
    }
    Ok(DatasetDir { skeleton, manifest, train, val })
}
