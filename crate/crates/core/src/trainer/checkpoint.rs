use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::{Error, Result};
use crate::scenedata::FrequencyBias;

use super::model::{ModelDims, ModelParams};
use super::TrainConfig;

pub const CHECKPOINT_VERSION: &str = "hlnet-checkpoint 1";

/// Text checkpoint: version line, then `[config]`, `[dims]`, `[frequency]`
/// and `[params]` sections. Floats use shortest round-trip formatting.
pub fn checkpoint_to_string(model: &ModelParams, cfg: &TrainConfig) -> String {
    let mut s = format!("{CHECKPOINT_VERSION}\n[config]\n");
    s.push_str(&cfg.to_kv());
    let d = model.dims;
    let _ = write!(
        s,
        "[dims]\nnum_obj_classes={}\nnum_rel_classes={}\nd_app={}\n[frequency]\n",
        d.num_obj_classes, d.num_rel_classes, d.d_app
    );
    for (&(a, b), row) in model.freq.rows() {
        let _ = write!(s, "{a} {b}");
        for v in row {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    s.push_str("[params]\n");
    for (_, p) in model.store.iter() {
        let shape: Vec<String> = p.array.shape().iter().map(|x| x.to_string()).collect();
        let _ = write!(s, "{} {}", p.id, shape.join("x"));
        for v in p.array.values() {
            let _ = write!(s, " {v}");
        }
        s.push('\n');
    }
    s
}

fn parse_f64s<'a>(it: impl Iterator<Item = &'a str>, line: usize) -> Result<Vec<f64>> {
    it.map(|t| {
        t.parse::<f64>().map_err(|_| Error::Parse {
            line,
            msg: format!("bad number `{t}`"),
        })
    })
    .collect()
}

pub fn checkpoint_from_str(text: &str) -> Result<(TrainConfig, ModelParams)> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, v)) if v.trim() == CHECKPOINT_VERSION => {}
        other => {
            return Err(Error::Parse {
                line: 1,
                msg: format!("expected `{CHECKPOINT_VERSION}`, got {:?}", other.map(|o| o.1)),
            })
        }
    }
    let mut section = "";
    let mut config = String::new();
    let mut dims = String::new();
    let mut freq_rows: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    let mut params: Vec<(usize, String, Vec<usize>, Vec<f64>)> = Vec::new();
    for (n, raw) in lines {
        let line_no = n + 1;
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') && line.ends_with(']') {
            section = match line {
                "[config]" | "[dims]" | "[frequency]" | "[params]" => line,
                other => {
                    return Err(Error::Parse {
                        line: line_no,
                        msg: format!("unknown section {other}"),
                    })
                }
            };
            continue;
        }
        let err = |msg: String| Error::Parse { line: line_no, msg };
        match section {
            "[config]" => {
                config.push_str(line);
                config.push('\n');
            }
            "[dims]" => {
                dims.push_str(line);
                dims.push('\n');
            }
            "[frequency]" => {
                let mut t = line.split_whitespace();
                let mut idx = || -> Result<usize> {
                    t.next()
                        .and_then(|x| x.parse().ok())
                        .ok_or_else(|| err("bad class index".into()))
                };
                let key = (idx()?, idx()?);
                freq_rows.insert(key, parse_f64s(t, line_no)?);
            }
            "[params]" => {
                let mut t = line.split_whitespace();
                let id = t.next().ok_or_else(|| err("missing parameter id".into()))?.to_string();
                let shape = t
                    .next()
                    .ok_or_else(|| err("missing shape".into()))?
                    .split('x')
                    .map(|x| x.parse::<usize>().map_err(|_| err(format!("bad shape `{x}`"))))
                    .collect::<Result<Vec<_>>>()?;
                params.push((line_no, id, shape, parse_f64s(t, line_no)?));
            }
            _ => return Err(err("content before the first section".into())),
        }
    }
    let cfg = TrainConfig::from_kv(&config)?;
    let dim_map = crate::config::parse_kv(&dims)?;
    let need = |k: &str| -> Result<usize> {
        crate::config::get(&dim_map, k)?.ok_or_else(|| Error::Config(format!("checkpoint lacks `{k}`")))
    };
    let dims = ModelDims {
        num_obj_classes: need("num_obj_classes")?,
        num_rel_classes: need("num_rel_classes")?,
        d_app: need("d_app")?,
    };
    if let Some((k, row)) = freq_rows.iter().find(|(_, r)| r.len() != dims.num_rel_classes) {
        return Err(Error::Config(format!(
            "frequency row {k:?} has {} entries, expected {}",
            row.len(),
            dims.num_rel_classes
        )));
    }
    let freq = FrequencyBias::from_rows(dims.num_rel_classes, freq_rows);
    let mut model = ModelParams::new(&cfg, dims, freq)?;
    if params.len() != model.store.len() {
        return Err(Error::Config(format!(
            "checkpoint holds {} parameters, configuration defines {}",
            params.len(),
            model.store.len()
        )));
    }
    for (line, id, shape, values) in params {
        let pid = model
            .store
            .lookup(&id)
            .ok_or_else(|| Error::Config(format!("unknown parameter `{id}`")))?;
        let arr = &mut model.store.get_mut(pid).array;
        if arr.shape() != shape.as_slice() || values.len() != arr.len() {
            return Err(Error::Parse {
                line,
                msg: format!("parameter `{id}` has shape {shape:?} with {} values, expected {:?}", values.len(), arr.shape()),
            });
        }
        arr.values_mut().copy_from_slice(&values);
    }
    Ok((cfg, model))
}

pub fn save_checkpoint(path: &Path, model: &ModelParams, cfg: &TrainConfig) -> Result<()> {
    std::fs::write(path, checkpoint_to_string(model, cfg))?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<(TrainConfig, ModelParams)> {
    checkpoint_from_str(&std::fs::read_to_string(path)?)
}
