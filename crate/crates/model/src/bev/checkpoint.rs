//! Single-file checkpoints: an 8-byte magic, a little-endian `u64` header
//! length, a JSON header, then every array as little-endian `f32`.

use std::fs;
use std::io::Write;
use std::path::Path;

use grounding_core::camera::CameraRig;
use grounding_core::{Error, Result};
use serde::{Deserialize, Serialize};

use super::config::{BevConfig, TrainConfig};
use super::model::BevGrounding;
use crate::optim::{Adam, AdamConfig};
use crate::tensor::Tensor;

const MAGIC: &[u8; 8] = b"BEVGCKPT";
const FORMAT: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stage {
    Lidar,
    Camera,
}

/// Where an interrupted run stands.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub stage: Stage,
    /// Optimizer steps completed in `stage`.
    pub step: usize,
    pub adam: AdamConfig,
    pub adam_t: u64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct ArrayEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct Header {
    format: u32,
    config: BevConfig,
    text_dim: usize,
    use_images: bool,
    rig: Option<CameraRig>,
    train: Option<TrainConfig>,
    state: Option<TrainState>,
    arrays: Vec<ArrayEntry>,
}

/// Decoded checkpoint contents.
pub struct Checkpoint {
    pub model: BevGrounding<f32>,
    pub rig: Option<CameraRig>,
    pub train: Option<TrainConfig>,
    pub state: Option<TrainState>,
    pub optimizer: Option<Adam<f32>>,
}

pub fn save(
    path: &Path,
    model: &BevGrounding<f32>,
    rig: Option<&CameraRig>,
    train: Option<&TrainConfig>,
    state: Option<(&TrainState, &Adam<f32>)>,
) -> Result<()> {
    let mut arrays = Vec::new();
    let mut payload: Vec<f32> = Vec::new();
    let mut push = |name: String, t: &Tensor<f32>| {
        arrays.push(ArrayEntry {
            name,
            shape: t.shape().to_vec(),
            offset: payload.len(),
        });
        payload.extend_from_slice(t.data());
    };
    let store = &model.params;
    for id in store.ids() {
        push(store.name(id).to_string(), store.get(id));
    }
    if let Some((_, adam)) = state {
        for id in store.ids() {
            let shape = store.get(id).shape();
            push(format!("adam.m/{}", store.name(id)), &Tensor::from_vec(shape, adam.m[id.0].clone()));
            push(format!("adam.v/{}", store.name(id)), &Tensor::from_vec(shape, adam.v[id.0].clone()));
        }
    }
    let header = Header {
        format: FORMAT,
        config: model.config.clone(),
        text_dim: model.text_dim,
        use_images: model.use_images,
        rig: rig.cloned(),
        train: train.cloned(),
        state: state.map(|(s, _)| s.clone()),
        arrays,
    };
    let json = serde_json::to_vec(&header)?;
    let mut bytes = Vec::with_capacity(16 + json.len() + 4 * payload.len());
    bytes.extend_from_slice(MAGIC);
    bytes.extend_from_slice(&(json.len() as u64).to_le_bytes());
    bytes.extend_from_slice(&json);
    for v in &payload {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    // Write to a sibling file first so a crash never leaves a torn checkpoint.
    let tmp = path.with_extension("partial");
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(&bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<Checkpoint> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |m: &str| Error::Format(format!("{}: {m}", path.display()));
    if bytes.len() < 16 || &bytes[..8] != MAGIC {
        return Err(bad("not a checkpoint"));
    }
    let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16..16 + hlen).ok_or_else(|| bad("truncated header"))?;
    let header: Header = serde_json::from_slice(body)?;
    if header.format != FORMAT {
        return Err(bad(&format!("unsupported format {}", header.format)));
    }
    let data = &bytes[16 + hlen..];
    if data.len() % 4 != 0 {
        return Err(bad("payload is not a whole number of floats"));
    }
    let floats: Vec<f32> = data.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
    let array = |name: &str| -> Result<Tensor<f32>> {
        let e = header
            .arrays
            .iter()
            .find(|a| a.name == name)
            .ok_or_else(|| bad(&format!("missing array `{name}`")))?;
        let len: usize = e.shape.iter().product();
        let slice = floats
            .get(e.offset..e.offset + len)
            .ok_or_else(|| bad(&format!("array `{name}` runs past the payload")))?;
        Ok(Tensor::from_vec(&e.shape, slice.to_vec()))
    };
    let mut model = BevGrounding::<f32>::new(header.config.clone(), header.text_dim, header.rig.as_ref(), 0)?;
    model.use_images = header.use_images;
    let ids: Vec<_> = model.params.ids().collect();
    for &id in &ids {
        let name = model.params.name(id).to_string();
        let t = array(&name)?;
        if t.shape() != model.params.get(id).shape() {
            return Err(bad(&format!("array `{name}` has shape {:?}", t.shape())));
        }
        *model.params.get_mut(id) = t;
    }
    let optimizer = match &header.state {
        Some(st) => {
            let mut adam = Adam::new(&model.params, st.adam.clone());
            adam.t = st.adam_t;
            for &id in &ids {
                let name = model.params.name(id).to_string();
                adam.m[id.0] = array(&format!("adam.m/{name}"))?.into_data();
                adam.v[id.0] = array(&format!("adam.v/{name}"))?.into_data();
            }
            Some(adam)
        }
        None => None,
    };
    Ok(Checkpoint {
        model,
        rig: header.rig,
        train: header.train,
        state: header.state,
        optimizer,
    })
}
