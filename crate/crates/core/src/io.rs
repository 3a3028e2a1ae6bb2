//! On-disk dataset layout:
//!
//! ```text
//! <root>/<split>/<video-id>/000001.pgm ...   8-bit binary PGM frames
//! <root>/<split>/<video-id>/groundtruth.txt  one `x,y,w,h` line per frame
//! <root>/<split>/<video-id>/weaklabels.txt   optional, `t,kind` lines
//! ```
//!
//! Frame files are numbered from 1; `t` in `weaklabels.txt` is the 0-based
//! frame index and `kind` is `iou` or `dist`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::frame::Frame;
use crate::geometry::BBox;
use crate::rlcore::WeakKind;
use crate::synthworld::Video;

pub const GROUNDTRUTH_FILE: &str = "groundtruth.txt";
pub const WEAKLABELS_FILE: &str = "weaklabels.txt";

pub fn frame_file_name(index: usize) -> String {
    format!("{:06}.pgm", index + 1)
}

pub fn encode_pgm(frame: &Frame) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", frame.width(), frame.height()).into_bytes();
    out.extend(
        frame
            .data()
            .iter()
            .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8),
    );
    out
}

pub fn decode_pgm(bytes: &[u8], path: &Path) -> Result<Frame> {
    let bad = |detail: &str| Error::Parse {
        what: "PGM image",
        path: path.to_path_buf(),
        line: 1,
        detail: detail.to_string(),
    };
    // header: magic, width, height, maxval separated by whitespace; comments start with '#'
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && (bytes[pos].is_ascii_whitespace() || bytes[pos] == b'#') {
            if bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                pos += 1;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    pos += 1;
    if fields[0] != "P5" {
        return Err(bad("only binary greyscale (P5) is supported"));
    }
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if maxval == 0 || maxval > 255 {
        return Err(bad("only 8-bit images are supported"));
    }
    let data = bytes
        .get(pos..pos + w * h)
        .ok_or_else(|| bad("truncated pixel data"))?;
    Frame::new(
        w,
        h,
        data.iter().map(|&b| b as f32 / maxval as f32).collect(),
    )
}

pub fn format_groundtruth(gt: &[BBox]) -> String {
    gt.iter().fold(String::new(), |mut s, b| {
        let _ = writeln!(s, "{:.4},{:.4},{:.4},{:.4}", b.x, b.y, b.w, b.h);
        s
    })
}

pub fn parse_groundtruth(text: &str, path: &Path) -> Result<Vec<BBox>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, line)| {
            let err = |detail: String| Error::Parse {
                what: "groundtruth",
                path: path.to_path_buf(),
                line: i + 1,
                detail,
            };
            let vals = line
                .split([',', '\t', ' '])
                .filter(|s| !s.is_empty())
                .map(|s| {
                    s.trim()
                        .parse::<f64>()
                        .map_err(|e| err(format!("{s:?}: {e}")))
                })
                .collect::<Result<Vec<_>>>()?;
            if vals.len() != 4 {
                return Err(err(format!("expected 4 values, got {}", vals.len())));
            }
            BBox::new(vals[0], vals[1], vals[2], vals[3]).map_err(|e| err(e.to_string()))
        })
        .collect()
}

pub fn format_weaklabels(labels: &[(usize, WeakKind)]) -> String {
    labels.iter().fold(String::new(), |mut s, (t, k)| {
        let _ = writeln!(s, "{t},{}", k.as_str());
        s
    })
}

pub fn parse_weaklabels(text: &str, path: &Path) -> Result<Vec<(usize, WeakKind)>> {
    let mut out = text
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .map(|(i, line)| {
            let err = |detail: String| Error::Parse {
                what: "weaklabels",
                path: path.to_path_buf(),
                line: i + 1,
                detail,
            };
            let mut parts = line.split(',').map(str::trim);
            let t = parts
                .next()
                .unwrap_or_default()
                .parse::<usize>()
                .map_err(|e| err(format!("step: {e}")))?;
            let kind = WeakKind::parse(parts.next().unwrap_or_default())
                .map_err(|e| err(e.to_string()))?;
            Ok((t, kind))
        })
        .collect::<Result<Vec<_>>>()?;
    out.sort();
    out.dedup_by_key(|(t, _)| *t);
    Ok(out)
}

/// Writes one video directory, replacing any previous content of the files.
pub fn write_video(dir: &Path, video: &Video) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (i, f) in video.frames.iter().enumerate() {
        let p = dir.join(frame_file_name(i));
        fs::write(&p, encode_pgm(f)).map_err(|e| Error::io(&p, e))?;
    }
    let p = dir.join(GROUNDTRUTH_FILE);
    fs::write(&p, format_groundtruth(&video.gt)).map_err(|e| Error::io(&p, e))?;
    if let Some(labels) = &video.weak_labels {
        let p = dir.join(WEAKLABELS_FILE);
        fs::write(&p, format_weaklabels(labels)).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

/// Reads a video directory; its id is the directory name.
pub fn read_video(dir: &Path) -> Result<Video> {
    let id = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let gt_path = dir.join(GROUNDTRUTH_FILE);
    let text = fs::read_to_string(&gt_path).map_err(|e| Error::io(&gt_path, e))?;
    let gt = parse_groundtruth(&text, &gt_path)?;
    let frames = (0..gt.len())
        .map(|i| {
            let p = dir.join(frame_file_name(i));
            let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
            decode_pgm(&bytes, &p).map(Arc::new)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut video = Video::new(id, frames, gt)?;
    let wl_path = dir.join(WEAKLABELS_FILE);
    if wl_path.exists() {
        let text = fs::read_to_string(&wl_path).map_err(|e| Error::io(&wl_path, e))?;
        video.weak_labels = Some(parse_weaklabels(&text, &wl_path)?);
    }
    Ok(video)
}

/// Video directories of `<root>/<split>`, sorted by name.
pub fn split_dirs(root: &Path, split: &str) -> Result<Vec<PathBuf>> {
    let dir = root.join(split);
    let mut dirs: Vec<PathBuf> = fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join(GROUNDTRUTH_FILE).is_file())
        .collect();
    dirs.sort();
    Ok(dirs)
}

pub fn read_split(root: &Path, split: &str) -> Result<Vec<Video>> {
    split_dirs(root, split)?
        .iter()
        .map(|d| read_video(d))
        .collect()
}
