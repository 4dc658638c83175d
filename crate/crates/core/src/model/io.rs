//! Weight file: one JSON header line, then every parameter as a little-endian
//! f64 in layout order.
//!
//! ```text
//! {"format":"thermogyro-weights","version":1,"config":{...},"layers":[{"name":"conv1.weight","shape":[6,3,5,5]},...]}\n
//! <n_params * 8 bytes>
//! ```

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{FusionModel, Layout, ModelConfig};
use crate::error::{Error, Result};

pub const WEIGHTS_FORMAT: &str = "thermogyro-weights";
pub const WEIGHTS_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    config: ModelConfig,
    layers: Vec<TensorEntry>,
}

fn entries(layout: &Layout) -> Vec<TensorEntry> {
    layout
        .slots()
        .iter()
        .flat_map(|s| {
            [
                TensorEntry {
                    name: format!("{}.weight", s.id.name()),
                    shape: s.weight_shape.clone(),
                },
                TensorEntry {
                    name: format!("{}.bias", s.id.name()),
                    shape: vec![s.bias.len()],
                },
            ]
        })
        .collect()
}

pub fn write_weights(model: &FusionModel, mut out: impl Write) -> Result<()> {
    let header = Header {
        format: WEIGHTS_FORMAT.to_string(),
        version: WEIGHTS_VERSION,
        config: *model.config(),
        layers: entries(model.layout()),
    };
    let mut line = serde_json::to_vec(&header)?;
    line.push(b'\n');
    let mut buf = line;
    buf.reserve(model.n_params() * 8);
    for p in model.params() {
        buf.extend_from_slice(&p.to_le_bytes());
    }
    out.write_all(&buf).map_err(|e| Error::io("<weights>", e))
}

pub fn read_weights(input: impl Read) -> Result<FusionModel> {
    let mut reader = BufReader::new(input);
    let mut line = Vec::new();
    reader
        .read_until(b'\n', &mut line)
        .map_err(|e| Error::io("<weights>", e))?;
    if line.last() != Some(&b'\n') {
        return Err(Error::invalid("weight file is missing its header line"));
    }
    let header: Header = serde_json::from_slice(&line[..line.len() - 1])?;
    if header.format != WEIGHTS_FORMAT || header.version != WEIGHTS_VERSION {
        return Err(Error::invalid(format!(
            "unsupported weight format {} v{}",
            header.format, header.version
        )));
    }
    header.config.validate()?;
    let layout = Layout::for_config(&header.config);
    if header.layers != entries(&layout) {
        return Err(Error::invalid("weight file layer shapes do not match its config"));
    }
    let mut body = Vec::new();
    reader
        .read_to_end(&mut body)
        .map_err(|e| Error::io("<weights>", e))?;
    if body.len() != layout.total() * 8 {
        return Err(Error::invalid(format!(
            "weight body holds {} bytes, expected {}",
            body.len(),
            layout.total() * 8
        )));
    }
    let params = body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    FusionModel::from_params(header.config, params)
}

pub fn save_weights(model: &FusionModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    write_weights(model, &mut w)?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_weights(path: impl AsRef<Path>) -> Result<FusionModel> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_weights(file)
}
