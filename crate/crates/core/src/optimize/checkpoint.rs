use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use super::{AdamState, LossRecord, OptimizeError, StageConfig};
use crate::scene::{BoundAsset, ColoredMesh, GaussianCloud3D, SurfelCloud2D};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"GDCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StageKind {
    Stage1,
    Stage2,
}

#[derive(Debug, Clone, PartialEq)]
pub enum AssetState {
    Surfels(SurfelCloud2D),
    Bound(BoundAsset),
    Free(GaussianCloud3D),
}

/// Everything needed to continue a run: parameters, Adam moments, the
/// iteration counter and the config (whose seed drives every random draw).
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub stage: StageKind,
    pub config: StageConfig,
    pub iteration: usize,
    pub asset: AssetState,
    /// Rest vertices of the Laplacian regularizer (bound runs only).
    pub rest_vertices: Vec<[f64; 3]>,
    pub adam: AdamState,
    pub history: Vec<LossRecord>,
}

fn err(m: impl Into<String>) -> OptimizeError {
    OptimizeError::Checkpoint(m.into())
}

struct Arrays {
    entries: Vec<(String, Vec<f64>)>,
}

impl Arrays {
    fn push(&mut self, name: &str, values: Vec<f64>) {
        self.entries.push((name.to_string(), values));
    }

    fn push3(&mut self, name: &str, v: &[[f64; 3]]) {
        self.push(name, v.as_flattened().to_vec());
    }

    fn take(&mut self, name: &str) -> Result<Vec<f64>, OptimizeError> {
        let i = self
            .entries
            .iter()
            .position(|(n, _)| n == name)
            .ok_or_else(|| err(format!("missing array `{name}`")))?;
        Ok(self.entries.swap_remove(i).1)
    }

    fn take_rows<const K: usize>(&mut self, name: &str) -> Result<Vec<[f64; K]>, OptimizeError> {
        let v = self.take(name)?;
        if v.len() % K != 0 {
            return Err(err(format!(
                "array `{name}` has {} values, not a multiple of {K}",
                v.len()
            )));
        }
        Ok(v.chunks(K).map(|c| std::array::from_fn(|k| c[k])).collect())
    }
}

fn write_surfels(a: &mut Arrays, s: &SurfelCloud2D) {
    a.push3("positions", &s.positions);
    a.push3("colors", &s.colors);
    a.push("opacity_logits", s.opacity_logits.clone());
    a.push("log_scales", s.log_scales.as_flattened().to_vec());
    a.push("rotations", s.rotations.as_flattened().to_vec());
}

fn write_cloud(a: &mut Arrays, s: &GaussianCloud3D) {
    a.push3("positions", &s.positions);
    a.push3("colors", &s.colors);
    a.push("opacity_logits", s.opacity_logits.clone());
    a.push3("log_scales", &s.log_scales);
    a.push("rotations", s.rotations.as_flattened().to_vec());
}

fn write_bound(a: &mut Arrays, b: &BoundAsset) {
    a.push3("mesh.vertices", &b.mesh.vertices);
    a.push3("mesh.colors", &b.mesh.colors);
    a.push3("weights", &b.weights);
    a.push3("colors", &b.colors);
    a.push("opacity_logits", b.opacity_logits.clone());
    a.push("rotations", b.rotations.as_flattened().to_vec());
    a.push3("log_scales", &b.log_scales);
}

impl Checkpoint {
    /// `magic "GDCK"`, `u32` version, `u32` header length, a JSON header
    /// (config, counters, triangle indices, array directory), then the
    /// arrays as little-endian `f64`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut arrays = Arrays {
            entries: Vec::new(),
        };
        let (kind, triangles) = match &self.asset {
            AssetState::Surfels(s) => {
                write_surfels(&mut arrays, s);
                ("surfels", Vec::new())
            }
            AssetState::Free(c) => {
                write_cloud(&mut arrays, c);
                ("free", Vec::new())
            }
            AssetState::Bound(b) => {
                write_bound(&mut arrays, b);
                ("bound", b.mesh.triangles.clone())
            }
        };
        arrays.push3("rest_vertices", &self.rest_vertices);
        for (g, (m, v)) in self.adam.first.iter().zip(&self.adam.second).enumerate() {
            arrays.push(&format!("adam.first.{g}"), m.clone());
            arrays.push(&format!("adam.second.{g}"), v.clone());
        }
        arrays.push(
            "adam.hyper",
            vec![self.adam.beta1, self.adam.beta2, self.adam.eps],
        );
        arrays.push(
            "history.iteration",
            self.history.iter().map(|r| r.iteration as f64).collect(),
        );
        arrays.push(
            "history.loss",
            self.history.iter().map(|r| r.loss).collect(),
        );
        arrays.push(
            "history.mean_update",
            self.history.iter().map(|r| r.mean_update).collect(),
        );
        arrays.push("history.lr", self.history.iter().map(|r| r.lr).collect());
        let directory: Vec<Value> = arrays
            .entries
            .iter()
            .map(|(n, v)| json!([n, v.len()]))
            .collect();
        let header = json!({
            "stage": self.stage,
            "asset": kind,
            "iteration": self.iteration,
            "adam_step": self.adam.step,
            "adam_groups": self.adam.first.len(),
            "config": self.config,
            "triangles": triangles,
            "arrays": directory,
        });
        let header = serde_json::to_vec(&header).expect("checkpoint header serializes");
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(header.len() as u32).to_le_bytes());
        out.extend_from_slice(&header);
        for (_, v) in &arrays.entries {
            for x in v {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, OptimizeError> {
        if bytes.len() < 12 {
            return Err(err(format!(
                "expected at least 12 bytes, got {}",
                bytes.len()
            )));
        }
        if &bytes[..4] != CHECKPOINT_MAGIC {
            return Err(err(format!("bad magic {:?} at byte 0", &bytes[..4])));
        }
        let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
        if version != CHECKPOINT_VERSION {
            return Err(err(format!("unsupported version {version} at byte 4")));
        }
        let hlen = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
        if bytes.len() < 12 + hlen {
            return Err(err(format!(
                "header: expected {} bytes, got {}",
                12 + hlen,
                bytes.len()
            )));
        }
        let header: Value = serde_json::from_slice(&bytes[12..12 + hlen])
            .map_err(|e| err(format!("header at byte 12: {e}")))?;
        let field = |k: &str| {
            header
                .get(k)
                .ok_or_else(|| err(format!("header lacks `{k}`")))
        };
        let from = |k: &str| -> Result<Value, OptimizeError> { Ok(field(k)?.clone()) };
        let directory: Vec<(String, usize)> = serde_json::from_value(from("arrays")?)
            .map_err(|e| err(format!("array directory: {e}")))?;
        let total: usize = directory.iter().map(|(_, n)| n).sum();
        let expected = 12 + hlen + 8 * total;
        if bytes.len() != expected {
            return Err(err(format!(
                "expected {expected} bytes, got {}",
                bytes.len()
            )));
        }
        let mut offset = 12 + hlen;
        let mut arrays = Arrays {
            entries: Vec::new(),
        };
        for (name, n) in directory {
            let v = bytes[offset..offset + 8 * n]
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect();
            offset += 8 * n;
            arrays.push(&name, v);
        }
        let stage: StageKind =
            serde_json::from_value(from("stage")?).map_err(|e| err(e.to_string()))?;
        let config: StageConfig =
            serde_json::from_value(from("config")?).map_err(|e| err(format!("config: {e}")))?;
        let iteration: usize =
            serde_json::from_value(from("iteration")?).map_err(|e| err(e.to_string()))?;
        let kind: String =
            serde_json::from_value(from("asset")?).map_err(|e| err(e.to_string()))?;
        let asset = match kind.as_str() {
            "surfels" => AssetState::Surfels(SurfelCloud2D {
                positions: arrays.take_rows("positions")?,
                colors: arrays.take_rows("colors")?,
                opacity_logits: arrays.take("opacity_logits")?,
                log_scales: arrays.take_rows("log_scales")?,
                rotations: arrays.take_rows("rotations")?,
            }),
            "free" => AssetState::Free(GaussianCloud3D {
                positions: arrays.take_rows("positions")?,
                colors: arrays.take_rows("colors")?,
                opacity_logits: arrays.take("opacity_logits")?,
                log_scales: arrays.take_rows("log_scales")?,
                rotations: arrays.take_rows("rotations")?,
            }),
            "bound" => {
                let triangles: Vec<[u32; 3]> = serde_json::from_value(from("triangles")?)
                    .map_err(|e| err(format!("triangles: {e}")))?;
                AssetState::Bound(BoundAsset {
                    mesh: ColoredMesh::new(
                        arrays.take_rows("mesh.vertices")?,
                        arrays.take_rows("mesh.colors")?,
                        triangles,
                    ),
                    weights: arrays.take_rows("weights")?,
                    colors: arrays.take_rows("colors")?,
                    opacity_logits: arrays.take("opacity_logits")?,
                    rotations: arrays.take_rows("rotations")?,
                    log_scales: arrays.take_rows("log_scales")?,
                })
            }
            other => return Err(err(format!("unknown asset kind `{other}`"))),
        };
        let groups: usize =
            serde_json::from_value(from("adam_groups")?).map_err(|e| err(e.to_string()))?;
        let step: u64 =
            serde_json::from_value(from("adam_step")?).map_err(|e| err(e.to_string()))?;
        let hyper = arrays.take("adam.hyper")?;
        if hyper.len() != 3 {
            return Err(err("adam.hyper must hold 3 values"));
        }
        let mut adam = AdamState {
            beta1: hyper[0],
            beta2: hyper[1],
            eps: hyper[2],
            step,
            first: Vec::new(),
            second: Vec::new(),
        };
        for g in 0..groups {
            adam.first.push(arrays.take(&format!("adam.first.{g}"))?);
            adam.second.push(arrays.take(&format!("adam.second.{g}"))?);
        }
        let its = arrays.take("history.iteration")?;
        let loss = arrays.take("history.loss")?;
        let upd = arrays.take("history.mean_update")?;
        let lr = arrays.take("history.lr")?;
        if loss.len() != its.len() || upd.len() != its.len() || lr.len() != its.len() {
            return Err(err("history columns differ in length"));
        }
        let history = (0..its.len())
            .map(|i| LossRecord {
                iteration: its[i] as usize,
                loss: loss[i],
                mean_update: upd[i],
                lr: lr[i],
            })
            .collect();
        Ok(Checkpoint {
            stage,
            config,
            iteration,
            asset,
            rest_vertices: arrays.take_rows("rest_vertices")?,
            adam,
            history,
        })
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        std::fs::write(path, self.to_bytes())
    }

    pub fn load(path: &Path) -> Result<Self, OptimizeError> {
        let bytes = std::fs::read(path).map_err(|e| err(format!("{}: {e}", path.display())))?;
        Self::from_bytes(&bytes)
    }
}
