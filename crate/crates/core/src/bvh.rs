//! BVH import into a skeleton and global-6D motion.
//!
//! Supported subset: one `ROOT` with nested `JOINT`s, three rotation channels
//! per joint in any axis order (or none), position channels on the root only.
//! `End Site` blocks are skipped; they carry no rotation and become no joint.
//! Angles are in degrees. The root translation of a frame is the root
//! `OFFSET` plus its position channels.

use std::path::Path;

use crate::error::{Error, Result};
use crate::motion::MotionSeq;
use crate::rotation::{euler_to_matrix, Axis, AxisOrder, EulerAngles, RotMat, Vec3};
use crate::skeleton::{locals_to_globals, Joint, Pose, Skeleton};

#[derive(Clone, Debug, PartialEq)]
pub struct BvhImport {
    pub skeleton: Skeleton,
    pub motion: MotionSeq,
    pub fps: f64,
    /// Rotation order of each joint; `None` for joints without rotation channels.
    pub orders: Vec<Option<AxisOrder>>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Channel {
    Position(usize),
    Rotation(Axis),
}

struct Tokens<'a> {
    items: Vec<(usize, &'a str)>,
    pos: usize,
    last_line: usize,
}

impl<'a> Tokens<'a> {
    fn new(text: &'a str) -> Self {
        let items: Vec<(usize, &str)> =
            text.lines().enumerate().flat_map(|(i, l)| l.split_whitespace().map(move |t| (i + 1, t))).collect();
        Tokens { items, pos: 0, last_line: text.lines().count().max(1) }
    }

    fn line(&self) -> usize {
        self.items.get(self.pos).map_or(self.last_line, |t| t.0)
    }

    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Parse { line: self.line(), msg: msg.into() }
    }

    fn peek(&self) -> Option<&'a str> {
        self.items.get(self.pos).map(|t| t.1)
    }

    fn next(&mut self, what: &str) -> Result<(usize, &'a str)> {
        let t = self
            .items
            .get(self.pos)
            .copied()
            .ok_or_else(|| self.err(format!("unexpected end of file, expected {what}")))?;
        self.pos += 1;
        Ok(t)
    }

    fn expect(&mut self, word: &str) -> Result<()> {
        let line = self.line();
        let (_, t) = self.next(word)?;
        if !t.eq_ignore_ascii_case(word) {
            return Err(Error::Parse { line, msg: format!("expected `{word}`, found `{t}`") });
        }
        Ok(())
    }

    fn number(&mut self, what: &str) -> Result<f64> {
        let (line, t) = self.next(what)?;
        t.parse::<f64>()
            .ok()
            .filter(|v| v.is_finite())
            .ok_or_else(|| Error::Parse { line, msg: format!("expected {what}, found `{t}`") })
    }

    fn count(&mut self, what: &str) -> Result<usize> {
        let (line, t) = self.next(what)?;
        t.parse::<usize>().map_err(|_| Error::Parse { line, msg: format!("expected {what}, found `{t}`") })
    }
}

struct RawJoint {
    name: String,
    parent: Option<usize>,
    offset: Vec3,
    channels: Vec<Channel>,
    order: Option<AxisOrder>,
}

fn parse_channel(line: usize, name: &str, is_root: bool) -> Result<Channel> {
    let unsupported = || Error::UnsupportedChannel { line, channel: name.to_string() };
    let (axis, kind) = name.split_at(1.min(name.len()));
    let axis = match axis.to_ascii_uppercase().as_str() {
        "X" => 0,
        "Y" => 1,
        "Z" => 2,
        _ => return Err(unsupported()),
    };
    match kind.to_ascii_lowercase().as_str() {
        "rotation" => Ok(Channel::Rotation([Axis::X, Axis::Y, Axis::Z][axis])),
        "position" if is_root => Ok(Channel::Position(axis)),
        _ => Err(unsupported()),
    }
}

fn parse_joint(tok: &mut Tokens, parent: Option<usize>, joints: &mut Vec<RawJoint>) -> Result<()> {
    let (_, name) = tok.next("joint name")?;
    tok.expect("{")?;
    tok.expect("OFFSET")?;
    let offset = Vec3::new(tok.number("offset")?, tok.number("offset")?, tok.number("offset")?);
    tok.expect("CHANNELS")?;
    let n = tok.count("channel count")?;
    let mut channels = Vec::with_capacity(n);
    let mut rot_axes = Vec::new();
    let chan_line = tok.line();
    for _ in 0..n {
        let (line, c) = tok.next("channel name")?;
        let ch = parse_channel(line, c, parent.is_none())?;
        if let Channel::Rotation(a) = ch {
            rot_axes.push(a);
        }
        channels.push(ch);
    }
    let order = match rot_axes.len() {
        0 => None,
        3 => Some(
            AxisOrder::from_axes([rot_axes[0], rot_axes[1], rot_axes[2]])
                .map_err(|_| Error::Parse { line: chan_line, msg: "repeated rotation axis".into() })?,
        ),
        k => return Err(Error::Parse { line: chan_line, msg: format!("{k} rotation channels; need 0 or 3") }),
    };
    let index = joints.len();
    joints.push(RawJoint { name: name.to_string(), parent, offset, channels, order });
    loop {
        let line = tok.line();
        let (_, t) = tok.next("`JOINT`, `End Site` or `}`")?;
        match t.to_ascii_uppercase().as_str() {
            "JOINT" => parse_joint(tok, Some(index), joints)?,
            "END" => {
                tok.expect("Site")?;
                tok.expect("{")?;
                tok.expect("OFFSET")?;
                for _ in 0..3 {
                    tok.number("offset")?;
                }
                tok.expect("}")?;
            }
            "}" => return Ok(()),
            _ => return Err(Error::Parse { line, msg: format!("unexpected `{t}` in joint `{name}`") }),
        }
    }
}

pub fn parse_bvh(text: &str) -> Result<BvhImport> {
    let mut tok = Tokens::new(text);
    tok.expect("HIERARCHY")?;
    tok.expect("ROOT")?;
    let mut raw = Vec::new();
    parse_joint(&mut tok, None, &mut raw)?;
    if tok.peek().is_some_and(|t| t.eq_ignore_ascii_case("ROOT")) {
        return Err(tok.err("multiple roots are not supported"));
    }
    tok.expect("MOTION")?;
    tok.expect("Frames:")?;
    let frames = tok.count("frame count")?;
    tok.expect("Frame")?;
    tok.expect("Time:")?;
    let line = tok.line();
    let dt = tok.number("frame time")?;
    if dt <= 0.0 {
        return Err(Error::Parse { line, msg: format!("frame time must be positive, got {dt}") });
    }

    let skeleton = Skeleton::new(
        raw.iter().map(|j| Joint { name: j.name.clone(), parent: j.parent, offset: j.offset }).collect(),
    )?;
    let mut rotations = Vec::with_capacity(frames);
    let mut roots = Vec::with_capacity(frames);
    for f in 0..frames {
        let mut locals = Vec::with_capacity(raw.len());
        let mut root = raw[0].offset;
        for j in &raw {
            let mut angles = Vec::with_capacity(3);
            for ch in &j.channels {
                let v = tok.number(&format!("channel value for frame {}", f + 1))?;
                match ch {
                    Channel::Position(a) => root[*a] += v,
                    Channel::Rotation(_) => angles.push(v.to_radians()),
                }
            }
            locals.push(match j.order {
                Some(order) => euler_to_matrix(&EulerAngles::new([angles[0], angles[1], angles[2]], order))?,
                None => RotMat::identity(),
            });
        }
        let global = locals_to_globals(&skeleton, &Pose::local(locals, root))?;
        rotations.push(global.rotations);
        roots.push(root);
    }
    if tok.peek().is_some() {
        return Err(tok.err(format!("more values than {frames} frames")));
    }
    let motion =
        if frames == 0 { MotionSeq::zeros(0, skeleton.len()) } else { MotionSeq::from_rotations(&rotations, &roots)? };
    Ok(BvhImport { skeleton, motion, fps: 1.0 / dt, orders: raw.iter().map(|j| j.order).collect() })
}

pub fn bvh_import(path: &Path) -> Result<BvhImport> {
    parse_bvh(&std::fs::read_to_string(path)?)
}
