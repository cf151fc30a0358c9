//! A directory of TSR1 tensors described by a `manifest.txt`.
//!
//! Manifest entries prefixed `tensor.` map a role to a file name inside the
//! directory; every other entry is a scalar setting.

use std::fs;
use std::path::Path;
use std::str::FromStr;

use super::manifest::{format_kv, parse_kv, KvMap};
use super::write_atomic;
use crate::error::{Error, Result};
use crate::tensor::{encode_tsr, read_tsr, Tensor};

pub const MANIFEST_NAME: &str = "manifest.txt";
const TENSOR_PREFIX: &str = "tensor.";

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Bundle {
    pub scalars: KvMap,
    pub tensors: std::collections::BTreeMap<String, Tensor>,
}

impl Bundle {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) {
        self.scalars.insert(key.to_string(), value.to_string());
    }

    pub fn put(&mut self, role: impl Into<String>, t: Tensor) {
        self.tensors.insert(role.into(), t);
    }

    pub fn scalar<T: FromStr>(&self, key: &str) -> Result<T> {
        let raw = self
            .scalars
            .get(key)
            .ok_or_else(|| Error::Format(format!("bundle is missing setting {key:?}")))?;
        raw.parse()
            .map_err(|_| Error::Format(format!("bundle setting {key}={raw:?} does not parse")))
    }

    pub fn tensor(&self, role: &str) -> Result<&Tensor> {
        self.tensors
            .get(role)
            .ok_or_else(|| Error::Format(format!("bundle is missing tensor {role:?}")))
    }

    /// Copies every entry under `prefix.` into a new bundle with the prefix stripped.
    pub fn scoped(&self, prefix: &str) -> Bundle {
        let p = format!("{prefix}.");
        Bundle {
            scalars: self
                .scalars
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&p).map(|k| (k.to_string(), v.clone())))
                .collect(),
            tensors: self
                .tensors
                .iter()
                .filter_map(|(k, v)| k.strip_prefix(&p).map(|k| (k.to_string(), v.clone())))
                .collect(),
        }
    }

    /// Inserts every entry of `other` under `prefix.`.
    pub fn absorb(&mut self, prefix: &str, other: Bundle) {
        for (k, v) in other.scalars {
            self.scalars.insert(format!("{prefix}.{k}"), v);
        }
        for (k, v) in other.tensors {
            self.tensors.insert(format!("{prefix}.{k}"), v);
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut manifest = self.scalars.clone();
        for (role, t) in &self.tensors {
            let file = format!("{role}.tsr");
            write_atomic(&dir.join(&file), &encode_tsr(t))?;
            manifest.insert(format!("{TENSOR_PREFIX}{role}"), file);
        }
        write_atomic(&dir.join(MANIFEST_NAME), format_kv(&manifest).as_bytes())
    }

    pub fn load(dir: &Path) -> Result<Bundle> {
        let manifest = parse_kv(&fs::read_to_string(dir.join(MANIFEST_NAME))?)?;
        let mut b = Bundle::new();
        for (k, v) in manifest {
            match k.strip_prefix(TENSOR_PREFIX) {
                Some(role) => {
                    if v.contains('/') || v.contains('\\') {
                        return Err(Error::Format(format!("tensor file {v:?} must be a bare name")));
                    }
                    b.tensors.insert(role.to_string(), read_tsr(dir.join(&v))?);
                }
                None => {
                    b.scalars.insert(k, v);
                }
            }
        }
        Ok(b)
    }
}
