//! Line-delimited scene records, one scene per line:
//! `scene W H node id x1 y1 x2 y2 class ... rel s o p ...`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::gen::{materialize_features, Corpus, GenConfig, Split};
use super::{BBox, Canvas, ObjectNode, SceneGraph, Triplet};

pub const CONFIG_FILE: &str = "gen.cfg";

pub fn split_file_name(split: Split) -> String {
    format!("{}.sg", split.name())
}

pub fn write_split(scenes: &[SceneGraph]) -> String {
    let mut out = String::new();
    for g in scenes {
        out.push_str(&format!("scene {:.6} {:.6}", g.canvas.width, g.canvas.height));
        for n in &g.nodes {
            let b = &n.bbox;
            out.push_str(&format!(
                " node {} {:.6} {:.6} {:.6} {:.6} {}",
                n.id, b.x1, b.y1, b.x2, b.y2, n.class_label
            ));
        }
        for t in &g.triplets {
            out.push_str(&format!(" rel {} {} {}", t.subject, t.object, t.predicate));
        }
        out.push('\n');
    }
    out
}

struct Tokens<'a> {
    it: std::str::SplitWhitespace<'a>,
    line: usize,
}

impl<'a> Tokens<'a> {
    fn next_str(&mut self, what: &str) -> Result<&'a str> {
        self.it.next().ok_or_else(|| Error::Parse {
            line: self.line,
            msg: format!("record truncated, expected {what}"),
        })
    }

    fn num<T: std::str::FromStr>(&mut self, what: &str) -> Result<T> {
        let s = self.next_str(what)?;
        s.parse().map_err(|_| Error::Parse {
            line: self.line,
            msg: format!("invalid {what} `{s}`"),
        })
    }
}

fn parse_line(text: &str, line: usize) -> Result<SceneGraph> {
    let mut tok = Tokens { it: text.split_whitespace(), line };
    let err = |msg: String| Error::Parse { line, msg };
    if tok.next_str("`scene`")? != "scene" {
        return Err(err("record must start with `scene`".into()));
    }
    let canvas = Canvas {
        width: tok.num("canvas width")?,
        height: tok.num("canvas height")?,
    };
    let mut nodes = Vec::new();
    let mut triplets = Vec::new();
    while let Some(kind) = tok.it.next() {
        match kind {
            "node" => {
                if !triplets.is_empty() {
                    return Err(err("node entry after rel entries".into()));
                }
                let id: usize = tok.num("node id")?;
                let (x1, y1, x2, y2) = (tok.num("x1")?, tok.num("y1")?, tok.num("x2")?, tok.num("y2")?);
                let class_label = tok.num("class")?;
                let bbox = BBox::new(x1, y1, x2, y2).map_err(|e| err(e.to_string()))?;
                nodes.push(ObjectNode {
                    id,
                    bbox,
                    class_label,
                    appearance: Vec::new(),
                    detector_probs: Vec::new(),
                });
            }
            "rel" => triplets.push(Triplet {
                subject: tok.num("subject")?,
                object: tok.num("object")?,
                predicate: tok.num("predicate")?,
            }),
            other => return Err(err(format!("unknown entry `{other}`"))),
        }
    }
    let g = SceneGraph {
        canvas,
        nodes,
        triplets,
        feature_seed: 0,
        union_noise: 0.0,
    };
    g.validate().map_err(|e| err(e.to_string()))?;
    Ok(g)
}

/// Parses a split and regenerates appearance features from `cfg`.
pub fn read_split(text: &str, cfg: &GenConfig, split: Split) -> Result<Vec<SceneGraph>> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut g = parse_line(line, k + 1)?;
        for t in &g.triplets {
            if t.predicate >= cfg.num_rel_classes {
                return Err(Error::Parse {
                    line: k + 1,
                    msg: format!("predicate {} out of range", t.predicate),
                });
            }
        }
        materialize_features(&mut g, cfg, split, out.len()).map_err(|e| Error::Parse {
            line: k + 1,
            msg: e.to_string(),
        })?;
        out.push(g);
    }
    Ok(out)
}

pub fn write_corpus_dir(corpus: &Corpus, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), corpus.config.to_kv())?;
    for split in Split::ALL {
        fs::write(dir.join(split_file_name(split)), write_split(corpus.split(split)))?;
    }
    Ok(())
}

/// Reads `gen.cfg` plus the three split files. Missing split files read as empty.
pub fn read_corpus_dir(dir: &Path) -> Result<Corpus> {
    let config = GenConfig::from_kv(&fs::read_to_string(dir.join(CONFIG_FILE))?)?;
    let mut corpus = Corpus {
        config: config.clone(),
        train: Vec::new(),
        val: Vec::new(),
        test: Vec::new(),
    };
    for split in Split::ALL {
        let path = dir.join(split_file_name(split));
        if path.exists() {
            *corpus.split_mut(split) = read_split(&fs::read_to_string(path)?, &config, split)?;
        }
    }
    Ok(corpus)
}
