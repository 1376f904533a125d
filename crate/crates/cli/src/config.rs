//! Run configuration: a flat JSON object holding every [`TrainConfig`] field
//! plus the dataset and output paths.

use std::path::{Path, PathBuf};

use dualspace::trainer::TrainConfig;
use dualspace::Error;
use serde_json::{Map, Value};

use crate::args::TrainArgs;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub data: PathBuf,
    pub out: PathBuf,
    pub train: TrainConfig,
}

/// Keys owned by the run config rather than the training config.
const RUN_KEYS: [&str; 2] = ["data", "out"];

#[derive(Debug, Default)]
struct FileConfig {
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    train: TrainConfig,
}

fn parse_file(text: &str, path: &Path) -> Result<FileConfig, CliError> {
    let bad = |detail: String| -> CliError {
        Error::Format {
            what: "run config",
            detail: format!("{}: {detail}", path.display()),
        }
        .into()
    };
    let mut obj: Map<String, Value> = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    let mut take_path = |key: &str| -> Result<Option<PathBuf>, CliError> {
        match obj.remove(key) {
            None | Some(Value::Null) => Ok(None),
            Some(Value::String(s)) => Ok(Some(PathBuf::from(s))),
            Some(other) => Err(bad(format!("`{key}` must be a string, got {other}"))),
        }
    };
    let data = take_path(RUN_KEYS[0])?;
    let out = take_path(RUN_KEYS[1])?;
    // TrainConfig rejects unknown fields, so a typo anywhere fails here.
    let train = serde_json::from_value(Value::Object(obj)).map_err(|e| bad(e.to_string()))?;
    Ok(FileConfig { data, out, train })
}

/// Merges the optional config file with the flags (flags win) and validates
/// everything that does not need the data.
pub fn resolve(args: &TrainArgs) -> Result<RunConfig, CliError> {
    let file = match &args.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| {
                CliError::from(if e.kind() == std::io::ErrorKind::NotFound {
                    Error::MissingFile { path: path.clone() }
                } else {
                    Error::Io {
                        path: path.clone(),
                        source: e,
                    }
                })
            })?;
            parse_file(&text, path)?
        }
        None => FileConfig::default(),
    };
    let mut t = file.train;
    macro_rules! set {
        ($field:ident, $flag:expr) => {
            if let Some(v) = $flag.clone() {
                t.$field = v;
            }
        };
    }
    set!(alpha, args.alpha);
    set!(beta, args.beta);
    set!(epochs, args.epochs);
    set!(batch_size, args.batch_size);
    set!(learning_rate, args.lr);
    set!(momentum, args.momentum);
    set!(seed, args.seed);
    set!(ablation, args.ablation);
    set!(ridge, args.ridge);
    set!(audio_hidden, args.audio_hidden);
    set!(visual_hidden, args.visual_hidden);
    if args.fusion_dim.is_some() {
        t.fusion_dim = args.fusion_dim;
    }
    if args.share_ex_im {
        t.share_ex_im = true;
    }
    if args.no_normalize {
        t.normalize_inputs = false;
    }
    t.validate()?;
    let data = args
        .data
        .clone()
        .or(file.data)
        .ok_or_else(|| CliError::usage("missing --data (or `data` in --config)"))?;
    let out = args
        .out
        .clone()
        .or(file.out)
        .ok_or_else(|| CliError::usage("missing --out (or `out` in --config)"))?;
    Ok(RunConfig {
        data,
        out,
        train: t,
    })
}
