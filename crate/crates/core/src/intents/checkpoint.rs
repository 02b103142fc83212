//! Checkpoints and exports.
//!
//! A checkpoint is a directory holding `manifest.txt` plus one raw-f32 file
//! per parameter block. Manifest lines are `key = value` or
//! `block <name> <rows> <cols> <file>`; `#` starts a comment.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use ndarray::Array2;

use super::forward::{tower_values, ModelInputs, ScoringSnapshot};
use super::{IntentTower, LevelConfig, ModelParams};
use crate::error::{Error, Result};
use crate::ingest::{load_features, write_raw_f32, FeatureFormat};

pub const MANIFEST: &str = "manifest.txt";

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub params: ModelParams,
    /// Free-form `meta.*` entries.
    pub meta: BTreeMap<String, String>,
}

pub fn save_checkpoint(dir: &Path, params: &ModelParams, meta: &BTreeMap<String, String>) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut manifest = String::from("# intentgraph checkpoint\nformat = 1\n");
    let levels: Vec<String> = params.levels.counts().iter().map(usize::to_string).collect();
    let modalities: Vec<&str> = params.modalities().collect();
    writeln!(manifest, "levels = {}", levels.join(",")).unwrap();
    writeln!(manifest, "id_dim = {}", params.id_dim()).unwrap();
    writeln!(manifest, "n_users = {}", params.n_users()).unwrap();
    writeln!(manifest, "n_items = {}", params.n_items()).unwrap();
    writeln!(manifest, "modalities = {}", modalities.join(",")).unwrap();
    for (k, v) in meta {
        if v.contains('\n') {
            return Err(Error::Checkpoint(format!("meta value for `{k}` spans lines")));
        }
        writeln!(manifest, "meta.{k} = {v}").unwrap();
    }
    for (name, block) in params.blocks() {
        let file = format!("{name}.f32");
        write_raw_f32(block, &dir.join(&file))?;
        writeln!(manifest, "block {name} {} {} {file}", block.nrows(), block.ncols()).unwrap();
    }
    let path = dir.join(MANIFEST);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))
}

fn parse_usize(key: &str, v: &str) -> Result<usize> {
    v.parse().map_err(|_| Error::Checkpoint(format!("`{key}` is not an integer: {v}")))
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let path = dir.join(MANIFEST);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let mut keys: BTreeMap<String, String> = BTreeMap::new();
    let mut blocks: BTreeMap<String, Array2<f64>> = BTreeMap::new();
    for line in text.lines().map(str::trim) {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(rest) = line.strip_prefix("block ") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            let [name, rows, cols, file] = parts[..] else {
                return Err(Error::Checkpoint(format!("bad block line `{line}`")));
            };
            let m = load_features(&dir.join(file), FeatureFormat::RawF32, None)?;
            if m.dim() != (parse_usize("rows", rows)?, parse_usize("cols", cols)?) {
                return Err(Error::Checkpoint(format!("block `{name}` shape differs from manifest")));
            }
            blocks.insert(name.to_string(), m);
        } else if let Some((k, v)) = line.split_once('=') {
            keys.insert(k.trim().to_string(), v.trim().to_string());
        } else {
            return Err(Error::Checkpoint(format!("unrecognized manifest line `{line}`")));
        }
    }
    let get = |k: &str| keys.get(k).ok_or_else(|| Error::Checkpoint(format!("manifest lacks `{k}`")));
    let levels = LevelConfig::new(
        get("levels")?
            .split(',')
            .map(|s| parse_usize("levels", s.trim()))
            .collect::<Result<_>>()?,
    )?;
    let modalities: Vec<String> = get("modalities")?
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    let mut take = |name: &str| {
        blocks
            .remove(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing block `{name}`")))
    };
    let mut towers = BTreeMap::new();
    let mut user_intent = BTreeMap::new();
    for m in &modalities {
        let supernodes = (1..=levels.depth())
            .map(|l| take(&format!("tower.{m}.level{l}")))
            .collect::<Result<_>>()?;
        towers.insert(m.clone(), IntentTower { supernodes });
        user_intent.insert(m.clone(), take(&format!("user_intent.{m}"))?);
    }
    let params = ModelParams {
        levels,
        towers,
        user_intent,
        id_user: take("id_user")?,
        id_item: take("id_item")?,
    };
    if params.n_users() != parse_usize("n_users", get("n_users")?)?
        || params.n_items() != parse_usize("n_items", get("n_items")?)?
        || params.id_dim() != parse_usize("id_dim", get("id_dim")?)?
    {
        return Err(Error::Checkpoint("block shapes disagree with manifest sizes".into()));
    }
    let meta = keys
        .iter()
        .filter_map(|(k, v)| k.strip_prefix("meta.").map(|k| (k.to_string(), v.clone())))
        .collect();
    Ok(Checkpoint { params, meta })
}

/// Writes, per modality and level, `assignments_<m>_level<l>.csv` with
/// `item_id,argmax_intent,max_weight` from the item's chained distribution,
/// and the level's raw assignment matrix as `gamma_<m>_level<l>.f32`.
pub fn export_assignments(dir: &Path, params: &ModelParams, inputs: &ModelInputs) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (m, tv) in tower_values(params, inputs)? {
        for (l, (chain, gamma)) in tv.chains.iter().zip(&tv.assignments).enumerate() {
            let mut csv = String::from("item_id,argmax_intent,max_weight\n");
            for (item, row) in chain.rows().into_iter().enumerate() {
                let (arg, max) = row
                    .iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (k, &v)| if v > best.1 { (k, v) } else { best });
                writeln!(csv, "{item},{arg},{max}").unwrap();
            }
            let csv_name = format!("assignments_{m}_level{}.csv", l + 1);
            let path = dir.join(&csv_name);
            fs::write(&path, csv).map_err(|e| Error::io(&path, e))?;
            let gamma_name = format!("gamma_{m}_level{}.f32", l + 1);
            write_raw_f32(gamma, &dir.join(&gamma_name))?;
            written.push(csv_name);
            written.push(gamma_name);
        }
    }
    Ok(written)
}

/// Writes `item_repr_<m>.f32` per modality plus the fused `users.f32` and
/// `items.f32` scoring vectors.
pub fn export_embeddings(dir: &Path, params: &ModelParams, inputs: &ModelInputs) -> Result<Vec<String>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for (m, tv) in tower_values(params, inputs)? {
        let name = format!("item_repr_{m}.f32");
        write_raw_f32(&tv.item_repr, &dir.join(&name))?;
        written.push(name);
    }
    let snap = ScoringSnapshot::from_params(params, inputs)?;
    write_raw_f32(&snap.users, &dir.join("users.f32"))?;
    write_raw_f32(&snap.items, &dir.join("items.f32"))?;
    written.push("users.f32".into());
    written.push("items.f32".into());
    Ok(written)
}
