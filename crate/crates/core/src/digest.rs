//! Content digests of parameter tensors.

use alloc::string::String;
use core::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest as _, Sha256};

use crate::linalg::Matrix;

#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Digest(pub [u8; 32]);

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for b in self.0 {
            write!(f, "{b:02x}")?;
        }
        Ok(())
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({self})")
    }
}

impl Digest {
    pub fn to_hex(&self) -> String {
        alloc::format!("{self}")
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        if s.len() != 64 {
            return None;
        }
        let mut out = [0u8; 32];
        for (i, byte) in out.iter_mut().enumerate() {
            *byte = u8::from_str_radix(s.get(2 * i..2 * i + 2)?, 16).ok()?;
        }
        Some(Self(out))
    }
}

impl Serialize for Digest {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).ok_or_else(|| serde::de::Error::custom("expected 64 hex digits"))
    }
}

/// Incremental SHA-256 over labelled tensors and scalars.
pub struct TensorHasher(Sha256);

impl Default for TensorHasher {
    fn default() -> Self {
        Self(Sha256::new())
    }
}

impl TensorHasher {
    pub fn label(&mut self, name: &str) -> &mut Self {
        self.0.update((name.len() as u64).to_le_bytes());
        self.0.update(name.as_bytes());
        self
    }

    pub fn usize(&mut self, v: usize) -> &mut Self {
        self.0.update((v as u64).to_le_bytes());
        self
    }

    pub fn matrix(&mut self, m: &Matrix) -> &mut Self {
        self.usize(m.rows()).usize(m.cols());
        for v in m.as_slice() {
            self.0.update(v.to_bits().to_le_bytes());
        }
        self
    }

    pub fn values(&mut self, v: &[f64]) -> &mut Self {
        self.usize(v.len());
        for x in v {
            self.0.update(x.to_bits().to_le_bytes());
        }
        self
    }

    pub fn finish(self) -> Digest {
        let out = self.0.finalize();
        let mut bytes = [0u8; 32];
        bytes.copy_from_slice(out.as_slice());
        Digest(bytes)
    }
}

/// Cheap FNV-1a fingerprint used to detect stale forward caches.
pub(crate) fn fingerprint<'a>(tensors: impl IntoIterator<Item = &'a Matrix>) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    let mut mix = |v: u64| {
        h ^= v;
        h = h.wrapping_mul(0x0100_0000_01b3);
    };
    for m in tensors {
        mix(m.rows() as u64);
        mix(m.cols() as u64);
        for v in m.as_slice() {
            mix(v.to_bits());
        }
    }
    h
}
