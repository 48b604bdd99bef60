//! Checkpoint files: a line-oriented text manifest next to a flat
//! little-endian `f32` payload.
//!
//! ```text
//! format frpose-checkpoint 1
//! payload model.bin
//! meta step 500
//! entry param stem.conv.weight 16 3 7 7 0 2352
//! entry bn_mean stem.bn 16 - - - 9408 16
//! ```
//!
//! Offsets are byte offsets into the payload, lengths are element counts.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use super::adam::AdamState;
use super::params::ParamStore;
use super::tensor::Real;
use crate::error::{Error, Result};

const FORMAT_LINE: &str = "format frpose-checkpoint 1";

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EntryKind {
    Param,
    BnMean,
    BnVar,
    AdamM,
    AdamV,
}

impl EntryKind {
    fn tag(self) -> &'static str {
        match self {
            EntryKind::Param => "param",
            EntryKind::BnMean => "bn_mean",
            EntryKind::BnVar => "bn_var",
            EntryKind::AdamM => "adam_m",
            EntryKind::AdamV => "adam_v",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "param" => EntryKind::Param,
            "bn_mean" => EntryKind::BnMean,
            "bn_var" => EntryKind::BnVar,
            "adam_m" => EntryKind::AdamM,
            "adam_v" => EntryKind::AdamV,
            _ => return None,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Entry {
    pub kind: EntryKind,
    pub name: String,
    /// Four extents for parameters; `None` for flat vectors.
    pub dims: Option<[usize; 4]>,
    pub values: Vec<f32>,
}

/// In-memory image of a checkpoint.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Checkpoint {
    pub meta: BTreeMap<String, String>,
    pub entries: Vec<Entry>,
}

impl Checkpoint {
    /// Captures parameters, running statistics and (optionally) optimizer state.
    pub fn capture<T: Real>(store: &ParamStore<T>, adam: Option<&AdamState>) -> Self {
        let to_f32 = |v: &[T]| v.iter().map(|x| x.as_f64() as f32).collect::<Vec<_>>();
        let mut entries = Vec::new();
        for (_, name, t) in store.iter() {
            entries.push(Entry {
                kind: EntryKind::Param,
                name: name.to_string(),
                dims: Some(t.shape().dims()),
                values: to_f32(t.data()),
            });
        }
        for (name, s) in store.stats_iter() {
            for (kind, v) in [(EntryKind::BnMean, &s.mean), (EntryKind::BnVar, &s.var)] {
                entries.push(Entry {
                    kind,
                    name: name.to_string(),
                    dims: None,
                    values: to_f32(v),
                });
            }
        }
        let mut meta = BTreeMap::new();
        if let Some(adam) = adam {
            meta.insert("adam_step".into(), adam.step_count().to_string());
            meta.insert("adam_lr".into(), adam.lr.to_string());
            let (m, v) = adam.moments();
            let names: Vec<_> = store.iter().map(|(_, n, _)| n.to_string()).collect();
            for (kind, moments) in [(EntryKind::AdamM, m), (EntryKind::AdamV, v)] {
                for (name, values) in names.iter().zip(moments) {
                    entries.push(Entry {
                        kind,
                        name: name.clone(),
                        dims: None,
                        values: values.clone(),
                    });
                }
            }
        }
        Self { meta, entries }
    }

    /// Copies parameters and running statistics into `store`. Every stored
    /// parameter must be present with identical extents; the first mismatch is
    /// reported by name.
    pub fn restore_into<T: Real>(&self, store: &mut ParamStore<T>) -> Result<()> {
        let params: BTreeMap<&str, &Entry> = self
            .entries
            .iter()
            .filter(|e| e.kind == EntryKind::Param)
            .map(|e| (e.name.as_str(), e))
            .collect();
        for (_, name, t) in store.iter() {
            let Some(e) = params.get(name) else {
                return Err(Error::Checkpoint(format!("parameter {name} missing from checkpoint")));
            };
            if e.dims != Some(t.shape().dims()) {
                return Err(Error::Checkpoint(format!(
                    "parameter {name}: checkpoint extents {:?} vs network {}",
                    e.dims.unwrap_or_default(),
                    t.shape()
                )));
            }
        }
        if params.len() != store.len() {
            let extra = params.keys().find(|n| store.id(n).is_none()).copied().unwrap_or("?");
            return Err(Error::Checkpoint(format!("checkpoint parameter {extra} not in network")));
        }
        let ids: Vec<_> = store.ids().collect();
        for id in ids {
            let e = params[store.name(id)];
            let t = store.get_mut(id);
            for (d, s) in t.data_mut().iter_mut().zip(&e.values) {
                *d = T::lit(*s as f64);
            }
        }
        for (name, stats) in store.stats_iter_mut() {
            for (kind, dst) in [(EntryKind::BnMean, &mut stats.mean), (EntryKind::BnVar, &mut stats.var)] {
                let e = self
                    .entries
                    .iter()
                    .find(|e| e.kind == kind && e.name == name)
                    .ok_or_else(|| Error::Checkpoint(format!("running stats {name} missing")))?;
                if e.values.len() != dst.len() {
                    return Err(Error::Checkpoint(format!(
                        "running stats {name}: {} channels vs network {}",
                        e.values.len(),
                        dst.len()
                    )));
                }
                for (d, s) in dst.iter_mut().zip(&e.values) {
                    *d = T::lit(*s as f64);
                }
            }
        }
        Ok(())
    }

    /// Optimizer state, if the checkpoint carries one.
    pub fn adam_state<T: Real>(&self, store: &ParamStore<T>) -> Result<Option<AdamState>> {
        let Some(step) = self.meta.get("adam_step") else {
            return Ok(None);
        };
        let step: u64 = step
            .parse()
            .map_err(|_| Error::Checkpoint(format!("bad adam_step {step}")))?;
        let lr: f64 = self
            .meta
            .get("adam_lr")
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Checkpoint("missing adam_lr".into()))?;
        let collect = |kind: EntryKind| -> Result<Vec<Vec<f32>>> {
            store
                .iter()
                .map(|(_, name, _)| {
                    self.entries
                        .iter()
                        .find(|e| e.kind == kind && e.name == name)
                        .map(|e| e.values.clone())
                        .ok_or_else(|| Error::Checkpoint(format!("{} for {name} missing", kind.tag())))
                })
                .collect()
        };
        let mut adam = AdamState::new(lr);
        adam.restore(step, collect(EntryKind::AdamM)?, collect(EntryKind::AdamV)?);
        Ok(Some(adam))
    }

    /// Writes `<path>` (manifest) and `<path>.bin` (payload).
    pub fn save(&self, manifest: &Path) -> Result<()> {
        let payload_path = payload_path(manifest);
        let payload_name = payload_path
            .file_name()
            .and_then(|s| s.to_str())
            .ok_or_else(|| Error::Checkpoint(format!("bad checkpoint path {}", manifest.display())))?;
        let mut text = format!("{FORMAT_LINE}\npayload {payload_name}\n");
        for (k, v) in &self.meta {
            if k.contains(char::is_whitespace) || v.contains('\n') {
                return Err(Error::Checkpoint(format!("meta key {k:?} not storable")));
            }
            text.push_str(&format!("meta {k} {v}\n"));
        }
        let mut bytes = Vec::new();
        for e in &self.entries {
            if e.name.contains(char::is_whitespace) {
                return Err(Error::Checkpoint(format!("entry name {:?} contains whitespace", e.name)));
            }
            let dims = match e.dims {
                Some([n, c, h, w]) => format!("{n} {c} {h} {w}"),
                None => "- - - -".to_string(),
            };
            text.push_str(&format!(
                "entry {} {} {dims} {} {}\n",
                e.kind.tag(),
                e.name,
                bytes.len(),
                e.values.len()
            ));
            for v in &e.values {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        fs::write(manifest, text)?;
        fs::write(payload_path, bytes)?;
        Ok(())
    }

    pub fn load(manifest: &Path) -> Result<Self> {
        let text = fs::read_to_string(manifest)?;
        let bad = |line: &str| Error::Checkpoint(format!("malformed manifest line: {line}"));
        let mut lines = text.lines();
        if lines.next() != Some(FORMAT_LINE) {
            return Err(Error::Checkpoint(format!("{} is not a checkpoint manifest", manifest.display())));
        }
        let mut payload: Option<Vec<u8>> = None;
        let mut out = Checkpoint::default();
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let mut parts = line.split_whitespace();
            match parts.next() {
                Some("payload") => {
                    let name = parts.next().ok_or_else(|| bad(line))?;
                    let dir = manifest.parent().unwrap_or(Path::new("."));
                    payload = Some(fs::read(dir.join(name))?);
                }
                Some("meta") => {
                    let key = parts.next().ok_or_else(|| bad(line))?;
                    let value = parts.collect::<Vec<_>>().join(" ");
                    out.meta.insert(key.to_string(), value);
                }
                Some("entry") => {
                    let bytes = payload.as_ref().ok_or_else(|| bad(line))?;
                    let fields: Vec<_> = parts.collect();
                    if fields.len() != 8 {
                        return Err(bad(line));
                    }
                    let kind = EntryKind::parse(fields[0]).ok_or_else(|| bad(line))?;
                    let dims = if fields[2] == "-" {
                        None
                    } else {
                        let mut d = [0usize; 4];
                        for (i, f) in fields[2..6].iter().enumerate() {
                            d[i] = f.parse().map_err(|_| bad(line))?;
                        }
                        Some(d)
                    };
                    let offset: usize = fields[6].parse().map_err(|_| bad(line))?;
                    let len: usize = fields[7].parse().map_err(|_| bad(line))?;
                    let end = offset + 4 * len;
                    if end > bytes.len() {
                        return Err(Error::Checkpoint(format!("entry {} overruns payload", fields[1])));
                    }
                    let values = bytes[offset..end]
                        .chunks_exact(4)
                        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                        .collect();
                    out.entries.push(Entry {
                        kind,
                        name: fields[1].to_string(),
                        dims,
                        values,
                    });
                }
                _ => return Err(bad(line)),
            }
        }
        Ok(out)
    }
}

fn payload_path(manifest: &Path) -> PathBuf {
    let mut s = manifest.as_os_str().to_owned();
    s.push(".bin");
    PathBuf::from(s)
}
