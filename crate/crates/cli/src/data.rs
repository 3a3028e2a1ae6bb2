//! Dataset and artifact helpers shared by the commands.

use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use wsadapt::io::{read_split, split_dirs};
use wsadapt::synthworld::Video;

use crate::config::ExperimentConfig;
use crate::CliError;

pub fn require_dir(path: &Path, what: &str) -> Result<()> {
    if !path.is_dir() {
        return Err(CliError::new(
            "missing",
            format!("{what} {} does not exist", path.display()),
        )
        .into());
    }
    Ok(())
}

pub fn require_file(path: &Path, what: &str) -> Result<()> {
    if !path.is_file() {
        return Err(CliError::new(
            "missing",
            format!("{what} {} does not exist", path.display()),
        )
        .into());
    }
    Ok(())
}

fn has_videos(root: &Path, split: &str) -> bool {
    split_dirs(root, split)
        .map(|d| !d.is_empty())
        .unwrap_or(false)
}

pub fn load_split(root: &Path, split: &str) -> Result<Vec<Video>> {
    let videos = read_split(root, split)?;
    if videos.is_empty() {
        return Err(CliError::new(
            "missing",
            format!("split {} has no videos", root.join(split).display()),
        )
        .into());
    }
    Ok(videos)
}

/// Training and validation videos. Without a validation split, the last
/// fifth of the training videos (at least one) is held out instead.
pub fn load_train_val(cfg: &ExperimentConfig) -> Result<(Vec<Video>, Vec<Video>)> {
    let mut train = load_split(&cfg.data, &cfg.splits.train)?;
    if has_videos(&cfg.data, &cfg.splits.val) {
        let val = load_split(&cfg.data, &cfg.splits.val)?;
        return Ok((train, val));
    }
    if train.len() < 2 {
        return Err(CliError::new(
            "missing",
            "no validation split and too few training videos to hold some out",
        )
        .into());
    }
    let n_val = (train.len() / 5).max(1);
    let val = train.split_off(train.len() - n_val);
    log::warn!(
        "no '{}' split under {}; holding out {n_val} training videos for validation",
        cfg.splits.val,
        cfg.data.display()
    );
    Ok((train, val))
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).with_context(|| format!("creating {}", parent.display()))?;
    }
    fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}
