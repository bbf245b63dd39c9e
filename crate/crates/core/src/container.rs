//! Named-tensor container used for model weights and direction sets.
//!
//! Byte layout:
//!
//! ```text
//! [u64 LE: LEN][LEN bytes: UTF-8 JSON object][payload: row-major LE f32]
//! ```
//!
//! The JSON object maps each tensor name to
//! `{"dtype":"f32","shape":[..],"offset":o,"nbytes":n}` (offsets are relative
//! to the start of the payload). Any other key holds free-form metadata, e.g.
//! the model `config` object. Keys are written in sorted order and tensors are
//! packed in key order, so writing the same container twice gives identical
//! bytes.

use std::collections::BTreeMap;

use serde_json::{json, Map, Value};

use crate::error::{Error, Result};

/// A dense f32 tensor in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: Vec<f32>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f32>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::DimMismatch(format!(
                "shape {shape:?} needs {n} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn vector(data: Vec<f32>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }
}

/// In-memory form of a container file.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Container {
    pub tensors: BTreeMap<String, Tensor>,
    pub meta: BTreeMap<String, Value>,
}

fn is_tensor_entry(v: &Value) -> bool {
    v.as_object().is_some_and(|o| o.contains_key("dtype"))
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) {
        self.tensors.insert(name.into(), tensor);
    }

    pub fn tensor(&self, name: &str) -> Result<&Tensor> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::MissingTensor(name.to_string()))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut header = Map::new();
        for (k, v) in &self.meta {
            if is_tensor_entry(v) {
                return Err(Error::MalformedHeader(format!(
                    "metadata key `{k}` looks like a tensor descriptor"
                )));
            }
            header.insert(k.clone(), v.clone());
        }
        let mut offset = 0usize;
        for (name, t) in &self.tensors {
            if header.contains_key(name) {
                return Err(Error::MalformedHeader(format!(
                    "`{name}` is both a tensor and a metadata key"
                )));
            }
            let nbytes = t.numel() * 4;
            header.insert(
                name.clone(),
                json!({"dtype": "f32", "shape": t.shape, "offset": offset, "nbytes": nbytes}),
            );
            offset += nbytes;
        }
        let header = serde_json::to_vec(&Value::Object(header))?;
        let mut out = Vec::with_capacity(8 + header.len() + offset);
        out.extend_from_slice(&(header.len() as u64).to_le_bytes());
        out.extend_from_slice(&header);
        for t in self.tensors.values() {
            for x in &t.data {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let malformed = |m: String| Error::MalformedHeader(m);
        if bytes.len() < 8 {
            return Err(malformed(format!(
                "container is {} bytes, shorter than the length prefix",
                bytes.len()
            )));
        }
        let len = u64::from_le_bytes(bytes[..8].try_into().unwrap());
        let len = usize::try_from(len).map_err(|_| malformed("header length overflows".into()))?;
        let rest = &bytes[8..];
        if len > rest.len() {
            return Err(malformed(format!(
                "header length {len} exceeds remaining {} bytes",
                rest.len()
            )));
        }
        let header: Value = serde_json::from_slice(&rest[..len])
            .map_err(|e| malformed(format!("metadata is not valid JSON: {e}")))?;
        let Value::Object(header) = header else {
            return Err(malformed("metadata is not a JSON object".into()));
        };
        let payload = &rest[len..];

        let mut out = Container::new();
        let mut extent = 0usize;
        for (name, v) in header {
            if !is_tensor_entry(&v) {
                out.meta.insert(name, v);
                continue;
            }
            let desc = v.as_object().unwrap();
            if desc.get("dtype").and_then(Value::as_str) != Some("f32") {
                return Err(malformed(format!("tensor `{name}` has unsupported dtype")));
            }
            let shape: Vec<usize> = desc
                .get("shape")
                .and_then(Value::as_array)
                .and_then(|a| a.iter().map(|x| x.as_u64().map(|x| x as usize)).collect())
                .ok_or_else(|| malformed(format!("tensor `{name}` has no valid shape")))?;
            let field = |k: &str| {
                desc.get(k)
                    .and_then(Value::as_u64)
                    .map(|x| x as usize)
                    .ok_or_else(|| malformed(format!("tensor `{name}` has no valid `{k}`")))
            };
            let offset = field("offset")?;
            let nbytes = field("nbytes")?;
            let numel: usize = shape.iter().product();
            if nbytes != numel * 4 {
                return Err(malformed(format!(
                    "tensor `{name}` declares {nbytes} bytes for shape {shape:?}"
                )));
            }
            let end = offset
                .checked_add(nbytes)
                .filter(|&e| e <= payload.len())
                .ok_or_else(|| {
                    malformed(format!(
                        "tensor `{name}` spans bytes {offset}..{} but payload has {}",
                        offset + nbytes,
                        payload.len()
                    ))
                })?;
            extent = extent.max(end);
            let data = payload[offset..end]
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect();
            out.tensors.insert(name, Tensor { shape, data });
        }
        if extent != payload.len() {
            return Err(malformed(format!(
                "payload has {} trailing bytes not referenced by any tensor",
                payload.len() - extent
            )));
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Container {
        let mut c = Container::new();
        c.insert(
            "b",
            Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
        );
        c.insert("a", Tensor::vector(vec![0.5, -0.25]));
        c.meta.insert("config".into(), json!({"x": 1}));
        c
    }

    #[test]
    fn roundtrip() {
        let c = sample();
        let bytes = c.to_bytes().unwrap();
        let back = Container::from_bytes(&bytes).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_bytes().unwrap(), bytes);
    }

    #[test]
    fn truncated_payload_is_rejected() {
        let bytes = sample().to_bytes().unwrap();
        let err = Container::from_bytes(&bytes[..bytes.len() - 1]).unwrap_err();
        assert!(matches!(err, Error::MalformedHeader(_)), "{err}");
    }

    #[test]
    fn trailing_bytes_are_rejected() {
        let mut bytes = sample().to_bytes().unwrap();
        bytes.extend_from_slice(&[0, 0, 0, 0]);
        assert!(Container::from_bytes(&bytes).is_err());
    }

    #[test]
    fn garbage_header() {
        let mut bytes = 4u64.to_le_bytes().to_vec();
        bytes.extend_from_slice(b"{{{{");
        assert!(matches!(
            Container::from_bytes(&bytes),
            Err(Error::MalformedHeader(_))
        ));
        assert!(Container::from_bytes(&[1, 2, 3]).is_err());
    }
}
