//! Layered `key=value` settings: config file first, then `--set`, then
//! dedicated flags.

use std::io;
use std::path::Path;

use mmvae::io::KvFile;
use mmvae::{Error, Result};

use crate::ConfigArgs;

/// Attaches the path to IO errors.
pub fn with_path<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Io(io) => Error::Io(io::Error::new(io.kind(), format!("{}: {io}", path.display()))),
        other => other,
    })
}

pub fn gather(cfg: &ConfigArgs, flags: Vec<(&str, Option<String>)>) -> Result<KvFile> {
    let mut entries = match &cfg.config {
        Some(p) => with_path(p, KvFile::load(p))?.entries,
        None => Vec::new(),
    };
    let mut put = |k: &str, v: String| match entries.iter_mut().find(|(e, _)| e == k) {
        Some(slot) => slot.1 = v,
        None => entries.push((k.to_string(), v)),
    };
    for s in &cfg.set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("--set expects KEY=VALUE, got `{s}`")))?;
        put(k.trim(), v.trim().to_string());
    }
    for (k, v) in flags {
        if let Some(v) = v {
            put(k, v);
        }
    }
    Ok(KvFile { entries })
}

/// Offers every key to the targets in order; keys nobody accepts are an error.
pub fn apply(kv: &KvFile, targets: &mut [&mut dyn FnMut(&str, &str) -> Result<bool>]) -> Result<()> {
    kv.apply_all(|k, v| {
        for t in targets.iter_mut() {
            if t(k, v)? {
                return Ok(true);
            }
        }
        Ok(false)
    })
}

pub fn flag<'a, T: ToString>(key: &'a str, v: &Option<T>) -> (&'a str, Option<String>) {
    (key, v.as_ref().map(ToString::to_string))
}
