use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use clap::Args;
use serde::Serialize;
use wsadapt::io::write_video;
use wsadapt::rlcore::WeakKind;
use wsadapt::seeds;
use wsadapt::synthworld::{generate_video_with_id, DomainSpec};

use crate::config::short_hash;
use crate::data::write_text;
use crate::CliError;

pub const MANIFEST_FILE: &str = "manifest.toml";
const SPLITS: [&str; 3] = ["train", "val", "test"];

#[derive(Args, Clone, Debug)]
pub struct GenDataArgs {
    /// Domain preset.
    #[arg(long)]
    pub domain: String,
    /// Output root; defaults to `data/<domain>`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = 16)]
    pub train: usize,
    #[arg(long, default_value_t = 0)]
    pub val: usize,
    #[arg(long, default_value_t = 8)]
    pub test: usize,
    /// Frames per video.
    #[arg(long, default_value_t = 48)]
    pub len: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Also write `weaklabels.txt` releasing supervision every k-th step.
    #[arg(long, value_name = "K")]
    pub weak_every: Option<usize>,
    /// Kind of the written weak labels (`iou` or `dist`).
    #[arg(long, default_value = "iou", value_parser = parse_kind)]
    pub weak_kind: WeakKind,
    /// Replace an existing dataset at the output root.
    #[arg(long)]
    pub force: bool,
}

fn parse_kind(s: &str) -> Result<WeakKind, String> {
    WeakKind::parse(s).map_err(|e| e.to_string())
}

#[derive(Serialize)]
struct Manifest<'a> {
    domain: &'a str,
    /// Decimal string: TOML integers stop at 2^63.
    seed: String,
    length: usize,
    weak_every: Option<usize>,
    weak_kind: &'a str,
    counts: Counts,
    spec: &'a DomainSpec,
    videos: Vec<Entry>,
}

#[derive(Serialize)]
struct Counts {
    train: usize,
    val: usize,
    test: usize,
}

#[derive(Serialize)]
struct Entry {
    split: &'static str,
    id: String,
    seed: String,
}

pub fn video_seed(master: u64, split: &str, index: usize) -> u64 {
    seeds::derive(master, &[seeds::label(split), index as u64])
}

pub fn run(a: &GenDataArgs) -> Result<()> {
    let spec = DomainSpec::preset(&a.domain)?;
    if a.len < 2 {
        return Err(CliError::new("usage", "--len must be >= 2").into());
    }
    if a.weak_every == Some(0) {
        return Err(CliError::new("usage", "--weak-every must be >= 1").into());
    }
    let root = a
        .out
        .clone()
        .unwrap_or_else(|| Path::new("data").join(&a.domain));
    let existing =
        root.join(MANIFEST_FILE).exists() || SPLITS.iter().any(|s| root.join(s).exists());
    if existing {
        if !a.force {
            return Err(CliError::new(
                "exists",
                format!(
                    "{} already holds a dataset; pass --force to replace it",
                    root.display()
                ),
            )
            .into());
        }
        for s in SPLITS {
            let dir = root.join(s);
            if dir.exists() {
                fs::remove_dir_all(&dir).with_context(|| format!("removing {}", dir.display()))?;
            }
        }
    }

    let counts = [a.train, a.val, a.test];
    let mut entries = Vec::new();
    for (split, &n) in SPLITS.iter().zip(&counts) {
        for i in 0..n {
            let id = format!("{split}-{i:04}");
            let seed = video_seed(a.seed, split, i);
            let mut v = generate_video_with_id(&spec, seed, a.len, id.clone())?;
            if let Some(k) = a.weak_every {
                v.weak_labels = Some((0..a.len).step_by(k).map(|t| (t, a.weak_kind)).collect());
            }
            write_video(&root.join(split).join(&id), &v)?;
            entries.push(Entry {
                split,
                id,
                seed: seed.to_string(),
            });
        }
    }

    let manifest = Manifest {
        domain: &a.domain,
        seed: a.seed.to_string(),
        length: a.len,
        weak_every: a.weak_every,
        weak_kind: a.weak_kind.as_str(),
        counts: Counts {
            train: a.train,
            val: a.val,
            test: a.test,
        },
        spec: &spec,
        videos: entries,
    };
    let body = toml::to_string(&manifest).context("serializing manifest")?;
    let text = format!(
        "# config_hash={} seed={} command=gen-data\n{body}",
        short_hash(body.as_bytes()),
        a.seed
    );
    write_text(&root.join(MANIFEST_FILE), &text)?;
    log::info!(
        "wrote {} videos of {} to {}",
        counts.iter().sum::<usize>(),
        a.domain,
        root.display()
    );
    Ok(())
}
