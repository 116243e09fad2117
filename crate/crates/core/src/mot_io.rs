//! MOTChallenge text formats and the in-memory sequence model.
//!
//! Ground truth rows are `frame,id,x,y,w,h,conf[,class,visibility]`, detection
//! rows are `frame,-1,x,y,w,h,conf` and tracker output rows are
//! `frame,id,x,y,w,h,conf,-1,-1,-1`. Numbers are written with at most six
//! decimals and no zero padding so that a write/parse/write cycle is stable.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{invalid, Error, Result};

/// Smallest side length a propagated box may shrink to.
pub const MIN_SIDE: f64 = 1e-3;

/// Axis-aligned box in pixels, `(x, y)` is the top-left corner.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BoundingBox {
    pub x: f64,
    pub y: f64,
    pub w: f64,
    pub h: f64,
}

impl BoundingBox {
    pub fn new(x: f64, y: f64, w: f64, h: f64) -> Result<Self> {
        let b = Self { x, y, w, h };
        b.validate()?;
        Ok(b)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.x.is_finite() && self.y.is_finite() && self.w.is_finite() && self.h.is_finite()) {
            return Err(invalid("non-finite box coordinate"));
        }
        if self.w <= 0.0 || self.h <= 0.0 {
            return Err(invalid("non-positive box"));
        }
        Ok(())
    }

    pub fn center(&self) -> (f64, f64) {
        (self.x + 0.5 * self.w, self.y + 0.5 * self.h)
    }

    pub fn area(&self) -> f64 {
        self.w * self.h
    }

    pub fn right(&self) -> f64 {
        self.x + self.w
    }

    pub fn bottom(&self) -> f64 {
        self.y + self.h
    }

    /// `(cx, cy, w/h, h)`
    pub fn to_xyah(&self) -> [f64; 4] {
        let (cx, cy) = self.center();
        [cx, cy, self.w / self.h, self.h]
    }

    pub fn from_xyah(xyah: [f64; 4]) -> Self {
        let h = xyah[3].max(MIN_SIDE);
        let w = (xyah[2] * h).max(MIN_SIDE);
        Self {
            x: xyah[0] - 0.5 * w,
            y: xyah[1] - 0.5 * h,
            w,
            h,
        }
    }

    /// Offset that carries `self` onto `target`.
    pub fn offset_to(&self, target: &BoundingBox) -> BoxOffset {
        BoxOffset {
            dx: target.x - self.x,
            dy: target.y - self.y,
            dw: target.w - self.w,
            dh: target.h - self.h,
        }
    }

    /// Applies an additive offset; sides are clamped to [`MIN_SIDE`].
    pub fn shifted(&self, off: &BoxOffset) -> BoundingBox {
        BoundingBox {
            x: self.x + off.dx,
            y: self.y + off.dy,
            w: (self.w + off.dw).max(MIN_SIDE),
            h: (self.h + off.dh).max(MIN_SIDE),
        }
    }
}

/// Additive box displacement `(Δx, Δy, Δw, Δh)`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct BoxOffset {
    pub dx: f64,
    pub dy: f64,
    pub dw: f64,
    pub dh: f64,
}

/// One detector output: a box and its confidence.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Detection {
    pub bbox: BoundingBox,
    pub conf: f64,
}

/// One ground-truth row.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GtEntry {
    pub frame: u32,
    pub id: u32,
    pub bbox: BoundingBox,
    /// The gt.txt consider flag (column 7). Always true unless rows with a
    /// zero flag were explicitly kept.
    pub visibility_flag: bool,
}

/// A video as seen by the evaluation code: metadata plus ground truth.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub name: String,
    pub fps: f64,
    pub width: f64,
    pub height: f64,
    /// Number of frames `N`; frames are `1..=length`.
    pub length: u32,
    pub gt: Vec<GtEntry>,
}

impl Sequence {
    pub fn new(
        name: impl Into<String>,
        fps: f64,
        width: f64,
        height: f64,
        length: u32,
        gt: Vec<GtEntry>,
    ) -> Result<Self> {
        let seq = Self {
            name: name.into(),
            fps,
            width,
            height,
            length,
            gt,
        };
        seq.validate()?;
        Ok(seq)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(invalid(format!("{}: fps must be positive", self.name)));
        }
        if !(self.width > 0.0 && self.height > 0.0) {
            return Err(invalid(format!("{}: image size must be positive", self.name)));
        }
        let mut seen = HashSet::with_capacity(self.gt.len());
        for e in &self.gt {
            if e.frame == 0 || e.frame > self.length {
                return Err(invalid(format!(
                    "{}: gt frame {} outside 1..={}",
                    self.name, e.frame, self.length
                )));
            }
            if !seen.insert((e.frame, e.id)) {
                return Err(invalid(format!(
                    "{}: duplicate gt entry for frame {} id {}",
                    self.name, e.frame, e.id
                )));
            }
        }
        Ok(())
    }

    /// Ground truth grouped by frame (index 0 is frame 1), sorted by id.
    pub fn frame_boxes(&self) -> Vec<Vec<(u32, BoundingBox)>> {
        let mut frames = vec![Vec::new(); self.length as usize];
        for e in self.gt.iter().filter(|e| e.visibility_flag) {
            frames[(e.frame - 1) as usize].push((e.id, e.bbox));
        }
        for f in &mut frames {
            f.sort_by_key(|(id, _)| *id);
        }
        frames
    }

    pub fn identities(&self) -> BTreeSet<u32> {
        self.gt.iter().map(|e| e.id).collect()
    }
}

/// `(frame_count, identity_count)` of a sequence.
pub fn sequence_stats(seq: &Sequence) -> (u32, usize) {
    (seq.length, seq.identities().len())
}

/// One output box of a tracker.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrackRow {
    pub frame: u32,
    pub id: u32,
    pub bbox: BoundingBox,
    pub conf: f64,
}

/// Tracker output, kept sorted by `(frame, id)`.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct TrackResult {
    rows: Vec<TrackRow>,
}

impl TrackResult {
    pub fn new(mut rows: Vec<TrackRow>) -> Result<Self> {
        rows.sort_by_key(|r| (r.frame, r.id));
        for pair in rows.windows(2) {
            if pair[0].frame == pair[1].frame && pair[0].id == pair[1].id {
                return Err(invalid(format!(
                    "two boxes for id {} in frame {}",
                    pair[0].id, pair[0].frame
                )));
            }
        }
        if let Some(r) = rows.iter().find(|r| r.id == 0 || r.frame == 0) {
            return Err(invalid(format!("non-positive frame/id in row {r:?}")));
        }
        Ok(Self { rows })
    }

    pub fn rows(&self) -> &[TrackRow] {
        &self.rows
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Boxes grouped by frame for a video of `length` frames.
    pub fn frame_boxes(&self, length: u32) -> Vec<Vec<(u32, BoundingBox)>> {
        let mut frames = vec![Vec::new(); length as usize];
        for r in &self.rows {
            if r.frame >= 1 && r.frame <= length {
                frames[(r.frame - 1) as usize].push((r.id, r.bbox));
            }
        }
        frames
    }
}

/// Formats with at most six decimals, trailing zeros removed.
pub fn fmt_num(v: f64) -> String {
    let mut s = format!("{v:.6}");
    if s.contains('.') {
        while s.ends_with('0') {
            s.pop();
        }
        if s.ends_with('.') {
            s.pop();
        }
    }
    if s == "-0" {
        s = "0".to_string();
    }
    s
}

fn fields(line: &str) -> Vec<&str> {
    line.split(',').map(str::trim).collect()
}

fn parse_f64(s: &str, line: usize, what: &str) -> Result<f64> {
    s.parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .ok_or_else(|| Error::Parse {
            line,
            msg: format!("bad {what} `{s}`"),
        })
}

fn parse_int(s: &str, line: usize, what: &str) -> Result<i64> {
    // Some tools write integer columns as `3.0`.
    if let Ok(v) = s.parse::<i64>() {
        return Ok(v);
    }
    match s.parse::<f64>() {
        Ok(v) if v.fract() == 0.0 && v.is_finite() => Ok(v as i64),
        _ => Err(Error::Parse {
            line,
            msg: format!("bad {what} `{s}`"),
        }),
    }
}

fn parse_box(f: &[&str], line: usize) -> Result<BoundingBox> {
    let b = BoundingBox {
        x: parse_f64(f[2], line, "x")?,
        y: parse_f64(f[3], line, "y")?,
        w: parse_f64(f[4], line, "w")?,
        h: parse_f64(f[5], line, "h")?,
    };
    b.validate().map_err(|e| match e {
        Error::Validation(msg) => Error::Validation(format!("line {line}: {msg}")),
        other => other,
    })?;
    Ok(b)
}

fn positive_u32(v: i64, line: usize, what: &str) -> Result<u32> {
    u32::try_from(v)
        .ok()
        .filter(|v| *v > 0)
        .ok_or_else(|| Error::Parse {
            line,
            msg: format!("{what} must be a positive integer, got {v}"),
        })
}

/// Parses gt.txt, dropping rows whose consider flag is 0.
pub fn parse_gt(text: &str) -> Result<Vec<GtEntry>> {
    parse_gt_with(text, false)
}

/// Parses gt.txt. With `keep_ignored` rows flagged 0 are kept with
/// `visibility_flag = false`.
pub fn parse_gt_with(text: &str, keep_ignored: bool) -> Result<Vec<GtEntry>> {
    let mut out = Vec::new();
    let mut seen = HashSet::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let f = fields(raw);
        if f.len() < 7 {
            return Err(Error::Parse {
                line,
                msg: format!("expected at least 7 fields, found {}", f.len()),
            });
        }
        let frame = positive_u32(parse_int(f[0], line, "frame")?, line, "frame")?;
        let id = positive_u32(parse_int(f[1], line, "id")?, line, "id")?;
        let bbox = parse_box(&f, line)?;
        let flag = parse_f64(f[6], line, "conf")? != 0.0;
        if !flag && !keep_ignored {
            continue;
        }
        if !seen.insert((frame, id)) {
            return Err(invalid(format!(
                "line {line}: duplicate entry for frame {frame} id {id}"
            )));
        }
        out.push(GtEntry {
            frame,
            id,
            bbox,
            visibility_flag: flag,
        });
    }
    Ok(out)
}

pub fn write_gt(entries: &[GtEntry]) -> String {
    let mut sorted: Vec<&GtEntry> = entries.iter().collect();
    sorted.sort_by_key(|e| (e.frame, e.id));
    let mut s = String::new();
    for e in sorted {
        let b = &e.bbox;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},1,1",
            e.frame,
            e.id,
            fmt_num(b.x),
            fmt_num(b.y),
            fmt_num(b.w),
            fmt_num(b.h),
            u8::from(e.visibility_flag)
        );
    }
    s
}

/// One line per box: `frame,id,x,y,w,h,conf,-1,-1,-1`, sorted by frame then id.
pub fn write_results(result: &TrackResult) -> String {
    let mut s = String::new();
    for r in result.rows() {
        let b = &r.bbox;
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},-1,-1,-1",
            r.frame,
            r.id,
            fmt_num(b.x),
            fmt_num(b.y),
            fmt_num(b.w),
            fmt_num(b.h),
            fmt_num(r.conf)
        );
    }
    s
}

pub fn parse_results(text: &str) -> Result<TrackResult> {
    let mut rows = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let f = fields(raw);
        if f.len() < 7 {
            return Err(Error::Parse {
                line,
                msg: format!("expected at least 7 fields, found {}", f.len()),
            });
        }
        rows.push(TrackRow {
            frame: positive_u32(parse_int(f[0], line, "frame")?, line, "frame")?,
            id: positive_u32(parse_int(f[1], line, "id")?, line, "id")?,
            bbox: parse_box(&f, line)?,
            conf: parse_f64(f[6], line, "conf")?,
        });
    }
    TrackResult::new(rows)
}

/// Writes det.txt rows in the given per-frame order (index 0 is frame 1).
pub fn write_detections(frames: &[Vec<Detection>]) -> String {
    let mut s = String::new();
    for (i, dets) in frames.iter().enumerate() {
        for d in dets {
            let b = &d.bbox;
            let _ = writeln!(
                s,
                "{},-1,{},{},{},{},{},-1,-1,-1",
                i + 1,
                fmt_num(b.x),
                fmt_num(b.y),
                fmt_num(b.w),
                fmt_num(b.h),
                fmt_num(d.conf)
            );
        }
    }
    s
}

/// Parses det.txt into `length` frames. Row order within a frame is kept,
/// which is what the embedding sidecar relies on.
pub fn parse_detections(text: &str, length: u32) -> Result<Vec<Vec<Detection>>> {
    let mut frames = vec![Vec::new(); length as usize];
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        if raw.trim().is_empty() {
            continue;
        }
        let f = fields(raw);
        if f.len() < 7 {
            return Err(Error::Parse {
                line,
                msg: format!("expected at least 7 fields, found {}", f.len()),
            });
        }
        let frame = positive_u32(parse_int(f[0], line, "frame")?, line, "frame")?;
        if frame > length {
            return Err(Error::Parse {
                line,
                msg: format!("frame {frame} beyond sequence length {length}"),
            });
        }
        frames[(frame - 1) as usize].push(Detection {
            bbox: parse_box(&f, line)?,
            conf: parse_f64(f[6], line, "conf")?,
        });
    }
    Ok(frames)
}

/// Contents of a per-sequence `info.txt` (plain `key=value` lines).
#[derive(Debug, Clone, PartialEq)]
pub struct SeqInfo {
    pub name: String,
    pub fps: f64,
    pub width: f64,
    pub height: f64,
    pub length: u32,
    /// Set for resampled videos.
    pub parent: Option<String>,
    pub k: Option<u32>,
    pub offset: Option<u32>,
    pub effective_fps: Option<f64>,
}

impl SeqInfo {
    pub fn of(seq: &Sequence) -> Self {
        Self {
            name: seq.name.clone(),
            fps: seq.fps,
            width: seq.width,
            height: seq.height,
            length: seq.length,
            parent: None,
            k: None,
            offset: None,
            effective_fps: None,
        }
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "name={}", self.name);
        let _ = writeln!(s, "fps={}", fmt_num(self.fps));
        let _ = writeln!(s, "width={}", fmt_num(self.width));
        let _ = writeln!(s, "height={}", fmt_num(self.height));
        let _ = writeln!(s, "length={}", self.length);
        if let Some(p) = &self.parent {
            let _ = writeln!(s, "parent={p}");
        }
        if let Some(k) = self.k {
            let _ = writeln!(s, "k={k}");
        }
        if let Some(o) = self.offset {
            let _ = writeln!(s, "offset={o}");
        }
        if let Some(e) = self.effective_fps {
            let _ = writeln!(s, "effective_fps={}", fmt_num(e));
        }
        s
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut kv = BTreeMap::new();
        for (idx, raw) in text.lines().enumerate() {
            let t = raw.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            let (k, v) = t.split_once('=').ok_or_else(|| Error::Parse {
                line: idx + 1,
                msg: "expected key=value".into(),
            })?;
            kv.insert(k.trim().to_string(), (idx + 1, v.trim().to_string()));
        }
        let get = |key: &str| {
            kv.get(key)
                .ok_or_else(|| Error::Format(format!("info file lacks `{key}`")))
        };
        let num = |key: &str| -> Result<f64> {
            let (line, v) = get(key)?;
            parse_f64(v, *line, key)
        };
        let opt_num = |key: &str| -> Result<Option<f64>> {
            kv.get(key)
                .map(|(line, v)| parse_f64(v, *line, key))
                .transpose()
        };
        let opt_u32 = |key: &str| -> Result<Option<u32>> {
            kv.get(key)
                .map(|(line, v)| {
                    parse_int(v, *line, key).and_then(|n| {
                        u32::try_from(n).map_err(|_| Error::Parse {
                            line: *line,
                            msg: format!("{key} out of range"),
                        })
                    })
                })
                .transpose()
        };
        Ok(Self {
            name: get("name")?.1.clone(),
            fps: num("fps")?,
            width: num("width")?,
            height: num("height")?,
            length: opt_u32("length")?.ok_or_else(|| Error::Format("info file lacks `length`".into()))?,
            parent: kv.get("parent").map(|(_, v)| v.clone()),
            k: opt_u32("k")?,
            offset: opt_u32("offset")?,
            effective_fps: opt_num("effective_fps")?,
        })
    }
}

pub const INFO_FILE: &str = "info.txt";
pub const GT_FILE: &str = "gt.txt";

/// Reads `<dir>/info.txt` and `<dir>/gt.txt`.
pub fn read_sequence_dir(dir: &Path) -> Result<Sequence> {
    let info = SeqInfo::parse(&fs::read_to_string(dir.join(INFO_FILE))?)?;
    let gt = parse_gt(&fs::read_to_string(dir.join(GT_FILE))?)?;
    Sequence::new(info.name, info.fps, info.width, info.height, info.length, gt)
}

/// Writes a sequence directory; `info` carries any resampling metadata.
pub fn write_sequence_dir(dir: &Path, seq: &Sequence, info: &SeqInfo) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(INFO_FILE), info.to_text())?;
    fs::write(dir.join(GT_FILE), write_gt(&seq.gt))?;
    Ok(())
}

/// Reads every sequence directory (one holding an info file) under `root`,
/// in name order.
pub fn read_benchmark_dir(root: &Path) -> Result<Vec<Sequence>> {
    let mut dirs: Vec<_> = fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(INFO_FILE).is_file())
        .collect();
    dirs.sort();
    dirs.iter().map(|d| read_sequence_dir(d)).collect()
}
