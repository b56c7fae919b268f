//! Model container: magic line, JSON header with architecture, shapes,
//! tensor names and the layout-manifest hash, then every parameter as
//! little-endian `f64` in tensor order.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Architecture, ModelParams, ModelShape, Parameters};
use crate::dataset::Provenance;
use crate::error::{Error, Result};

const MODEL_MAGIC: &str = "SOCREL-MODEL v1";

#[derive(Debug, Serialize, Deserialize)]
struct TensorInfo {
    name: String,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    provenance: Provenance,
    architecture: Architecture,
    shape: ModelShape,
    manifest_hash: String,
    /// Attributes of the layout the model was trained on, when it was
    /// trained on a subset.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    attributes: Option<Vec<String>>,
    tensors: Vec<TensorInfo>,
}

/// Trained parameters together with what is needed to use them safely.
#[derive(Debug, Clone, PartialEq)]
pub struct SavedModel {
    pub params: ModelParams,
    pub manifest_hash: String,
    pub attributes: Option<Vec<String>>,
    pub provenance: Provenance,
}

impl SavedModel {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let header = Header {
            provenance: self.provenance.clone(),
            architecture: self.params.architecture,
            shape: self.params.shape(),
            manifest_hash: self.manifest_hash.clone(),
            attributes: self.attributes.clone(),
            tensors: self
                .params
                .tensors()
                .into_iter()
                .map(|t| TensorInfo {
                    name: t.name,
                    len: t.values.len(),
                })
                .collect(),
        };
        let mut out = Vec::new();
        out.extend_from_slice(MODEL_MAGIC.as_bytes());
        out.push(b'\n');
        serde_json::to_writer(&mut out, &header)?;
        out.push(b'\n');
        for v in self.params.to_flat() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::format("model", m);
        let nl = bytes.iter().position(|b| *b == b'\n').ok_or_else(|| bad("missing magic line"))?;
        if &bytes[..nl] != MODEL_MAGIC.as_bytes() {
            return Err(bad("not a model file"));
        }
        let rest = &bytes[nl + 1..];
        let nl = rest.iter().position(|b| *b == b'\n').ok_or_else(|| bad("missing header"))?;
        let header: Header = serde_json::from_slice(&rest[..nl])?;
        let body = &rest[nl + 1..];

        let mut params = ModelParams::zeros(header.architecture, header.shape);
        let expected: Vec<(String, usize)> = params.tensors().into_iter().map(|t| (t.name, t.values.len())).collect();
        let declared: Vec<(String, usize)> = header.tensors.iter().map(|t| (t.name.clone(), t.len)).collect();
        if expected != declared {
            return Err(bad("tensor list does not match the declared architecture and shapes"));
        }
        if body.len() != params.num_parameters() * 8 {
            return Err(bad("parameter block length does not match the header"));
        }
        let flat: Vec<f64> = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(bad("non-finite parameter"));
        }
        params.load_flat(&flat)?;
        Ok(SavedModel {
            params,
            manifest_hash: header.manifest_hash,
            attributes: header.attributes,
            provenance: header.provenance,
        })
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        SavedModel::from_bytes(&bytes)
    }

    /// Refuses models trained on a different frame layout.
    pub fn check_manifest(&self, manifest_hash: &str) -> Result<()> {
        if self.manifest_hash != manifest_hash {
            return Err(Error::format(
                "model",
                format!(
                    "trained on layout {} but the dataset uses layout {}",
                    short(&self.manifest_hash),
                    short(manifest_hash)
                ),
            ));
        }
        Ok(())
    }
}

fn short(hash: &str) -> &str {
    &hash[..hash.len().min(12)]
}
