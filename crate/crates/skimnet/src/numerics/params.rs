//! Named parameter storage, the `SKNP` checkpoint container, and Adam.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use super::{bits_fingerprint, NumericsError, Result, Tensor};

const MAGIC: &[u8; 4] = b"SKNP";
const VERSION: u32 = 1;

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Tensor,
}

/// Map from parameter name to value plus a gradient buffer of identical
/// shape. Iteration order is the sorted name order everywhere, which keeps
/// optimizer updates deterministic.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Tensor) -> Result<()> {
        let grad = Tensor::zeros(value.shape().to_vec());
        self.entries.insert(name.to_string(), ParamEntry { value, grad });
        Ok(())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.value)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .map(|e| &mut e.value)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .map(|e| &e.grad)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))
    }

    pub fn add_grad(&mut self, name: &str, delta: &[f64]) -> Result<()> {
        let entry = self
            .entries
            .get_mut(name)
            .ok_or_else(|| NumericsError::UnknownParam(name.to_string()))?;
        if entry.grad.len() != delta.len() {
            return Err(NumericsError::ShapeMismatch {
                op: "add_grad".into(),
                detail: format!("{}: {} vs {}", name, entry.grad.len(), delta.len()),
            });
        }
        for (g, d) in entry.grad.data_mut().iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    /// Reset every gradient entry to exactly 0.0.
    pub fn zero_grads(&mut self) {
        for entry in self.entries.values_mut() {
            for g in entry.grad.data_mut() {
                *g = 0.0;
            }
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|s| s.as_str())
    }

    pub fn names_with_prefix(&self, prefix: &str) -> Vec<String> {
        self.entries
            .keys()
            .filter(|k| k.starts_with(prefix))
            .cloned()
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.entries.values().map(|e| e.value.len()).sum()
    }

    /// Fingerprint of the bit patterns of all values under `prefix`, names
    /// included. Used to assert that frozen parameters never move.
    pub fn fingerprint(&self, prefix: &str) -> u64 {
        let mut h: u64 = 0xcbf29ce484222325;
        for (name, entry) in self.entries.iter().filter(|(k, _)| k.starts_with(prefix)) {
            for b in name.as_bytes() {
                h ^= *b as u64;
                h = h.wrapping_mul(0x100000001b3);
            }
            h ^= bits_fingerprint(entry.value.data());
            h = h.wrapping_mul(0x100000001b3);
        }
        h
    }

    /// Serialize values (not gradients) to the flat binary container.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut buf: Vec<u8> = Vec::new();
        buf.extend_from_slice(MAGIC);
        buf.extend_from_slice(&VERSION.to_le_bytes());
        buf.extend_from_slice(&(self.entries.len() as u64).to_le_bytes());
        for (name, entry) in &self.entries {
            let nb = name.as_bytes();
            buf.extend_from_slice(&(nb.len() as u64).to_le_bytes());
            buf.extend_from_slice(nb);
            buf.extend_from_slice(&(entry.value.shape().len() as u64).to_le_bytes());
            for d in entry.value.shape() {
                buf.extend_from_slice(&(*d as u64).to_le_bytes());
            }
            for v in entry.value.data() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        let mut f = std::fs::File::create(path)?;
        f.write_all(&buf)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        std::fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::from_bytes(&bytes)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes);
        let magic = r.take(4)?;
        if magic != MAGIC {
            return Err(NumericsError::Container("bad magic, expected SKNP".into()));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(NumericsError::Container(format!("unsupported version {version}")));
        }
        let count = r.u64()? as usize;
        let mut store = ParamStore::new();
        for _ in 0..count {
            let name_len = r.u64()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| NumericsError::Container("non-UTF8 parameter name".into()))?;
            let rank = r.u64()? as usize;
            let mut shape = Vec::with_capacity(rank);
            for _ in 0..rank {
                shape.push(r.u64()? as usize);
            }
            let n: usize = shape.iter().product();
            let mut data = Vec::with_capacity(n);
            for _ in 0..n {
                data.push(f64::from_bits(r.u64()?));
            }
            store.insert(&name, Tensor::new(shape, data)?)?;
        }
        if !r.at_end() {
            return Err(NumericsError::Container("trailing bytes".into()));
        }
        Ok(store)
    }
}

struct ByteReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(NumericsError::Container("truncated container".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn u64(&mut self) -> Result<u64> {
        let b = self.take(8)?;
        Ok(u64::from_le_bytes([b[0], b[1], b[2], b[3], b[4], b[5], b[6], b[7]]))
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

/// Adam with bias correction; state keyed by parameter name.
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    state: BTreeMap<String, (Vec<f64>, Vec<f64>)>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            state: BTreeMap::new(),
        }
    }

    /// Apply one update to every parameter whose name passes `trainable`,
    /// then zero all gradients.
    pub fn step(&mut self, store: &mut ParamStore, trainable: &dyn Fn(&str) -> bool) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let names: Vec<String> = store.names().map(|s| s.to_string()).collect();
        for name in names {
            if !trainable(&name) {
                continue;
            }
            let grad = store.grad(&name)?.data().to_vec();
            let (m, v) = self
                .state
                .entry(name.clone())
                .or_insert_with(|| (vec![0.0; grad.len()], vec![0.0; grad.len()]));
            let value = store.get_mut(&name)?;
            let bc1 = 1.0 - self.beta1.powi(t);
            let bc2 = 1.0 - self.beta2.powi(t);
            for (i, g) in grad.iter().enumerate() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value.data_mut()[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        store.zero_grads();
        Ok(())
    }
}
