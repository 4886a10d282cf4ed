use std::collections::BTreeMap;
use std::io::{Read, Write};

use rand::Rng;

use super::Tensor;
use crate::error::{Error, Result};
use crate::seed::rng_for;

const CHECKPOINT_MAGIC: &[u8; 4] = b"SLUC";
const CHECKPOINT_VERSION: u8 = 0x01;

/// A named parameter with its gradient and AdamW moments.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Option<Tensor>,
    pub first_moment: Tensor,
    pub second_moment: Tensor,
    pub step: u64,
}

impl ParamEntry {
    pub fn new(value: Tensor) -> Self {
        let dims = value.dims().to_vec();
        Self {
            value,
            grad: None,
            first_moment: Tensor::zeros(&dims),
            second_moment: Tensor::zeros(&dims),
            step: 0,
        }
    }
}

/// Parameters keyed by name, iterated in lexicographic name order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) -> Result<()> {
        let name = name.into();
        if self.entries.contains_key(&name) {
            return Err(Error::InconsistentState(format!("duplicate parameter {name}")));
        }
        self.entries.insert(name, ParamEntry::new(value));
        Ok(())
    }

    pub fn value(&self, name: &str) -> &Tensor {
        &self.entry(name).value
    }

    pub fn value_mut(&mut self, name: &str) -> &mut Tensor {
        &mut self.entry_mut(name).value
    }

    pub fn entry(&self, name: &str) -> &ParamEntry {
        self.entries
            .get(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn entry_mut(&mut self, name: &str) -> &mut ParamEntry {
        self.entries
            .get_mut(name)
            .unwrap_or_else(|| panic!("unknown parameter {name}"))
    }

    pub fn get(&self, name: &str) -> Option<&ParamEntry> {
        self.entries.get(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.entries.contains_key(name)
    }

    /// Gradient buffer for `name`, created as zeros on first use.
    pub fn grad_mut(&mut self, name: &str) -> &mut [f64] {
        let entry = self.entry_mut(name);
        let dims = entry.value.dims().to_vec();
        entry
            .grad
            .get_or_insert_with(|| Tensor::zeros(&dims))
            .values_mut()
    }

    /// Moves the gradient buffer out (zeros if absent); pair with
    /// [`ParamStore::put_grad`].
    pub fn take_grad(&mut self, name: &str) -> Tensor {
        let entry = self.entry_mut(name);
        entry
            .grad
            .take()
            .unwrap_or_else(|| Tensor::zeros(entry.value.dims()))
    }

    pub fn put_grad(&mut self, name: &str, grad: Tensor) {
        self.entry_mut(name).grad = Some(grad);
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor> {
        self.entry(name).grad.as_ref()
    }

    pub fn zero_grad(&mut self) {
        for entry in self.entries.values_mut() {
            match entry.grad.as_mut() {
                Some(g) => g.values_mut().fill(0.0),
                None => entry.grad = Some(Tensor::zeros(entry.value.dims())),
            }
        }
    }

    /// Drops optimizer moments and step counters, keeping values.
    pub fn reset_optimizer_state(&mut self) {
        for entry in self.entries.values_mut() {
            entry.first_moment.values_mut().fill(0.0);
            entry.second_moment.values_mut().fill(0.0);
            entry.step = 0;
        }
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &ParamEntry)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut ParamEntry)> {
        self.entries.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count, optionally restricted to names with a prefix.
    pub fn num_scalars(&self, prefix: Option<&str>) -> usize {
        self.iter()
            .filter(|(name, _)| prefix.is_none_or(|p| name.starts_with(p)))
            .map(|(_, e)| e.value.len())
            .sum()
    }

    /// Copies parameter values from `other`; names and dims must match.
    pub fn copy_values_from(&mut self, other: &ParamStore) -> Result<()> {
        self.check_same_layout(other)?;
        for (name, entry) in self.entries.iter_mut() {
            entry.value = other.entries[name].value.clone();
        }
        Ok(())
    }

    pub fn check_same_layout(&self, other: &ParamStore) -> Result<()> {
        let mine: Vec<_> = self.iter().map(|(n, e)| (n, e.value.dims())).collect();
        let theirs: Vec<_> = other.iter().map(|(n, e)| (n, e.value.dims())).collect();
        if mine != theirs {
            return Err(Error::Checkpoint(format!(
                "parameter layout mismatch: expected {mine:?}, found {theirs:?}"
            )));
        }
        Ok(())
    }

    /// Serializes values in the `SLUC` v1 checkpoint layout.
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(CHECKPOINT_MAGIC)?;
        w.write_all(&[CHECKPOINT_VERSION])?;
        for (name, entry) in self.iter() {
            w.write_all(&(name.len() as u32).to_le_bytes())?;
            w.write_all(name.as_bytes())?;
            let dims = entry.value.dims();
            w.write_all(&(dims.len() as u32).to_le_bytes())?;
            for &d in dims {
                w.write_all(&(d as u32).to_le_bytes())?;
            }
            for v in entry.value.values() {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_checkpoint_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_checkpoint(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_checkpoint<R: Read>(mut r: R) -> Result<Self> {
        let mut bytes = Vec::new();
        r.read_to_end(&mut bytes)?;
        Self::from_checkpoint_bytes(&bytes)
    }

    pub fn from_checkpoint_bytes(bytes: &[u8]) -> Result<Self> {
        let mut cur = ByteCursor { bytes, pos: 0 };
        if cur.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = cur.take(1)?[0];
        if version != CHECKPOINT_VERSION {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let mut store = ParamStore::new();
        while !cur.at_end() {
            let name_len = cur.u32()? as usize;
            let name = std::str::from_utf8(cur.take(name_len)?)
                .map_err(|e| Error::Checkpoint(format!("parameter name: {e}")))?
                .to_string();
            let rank = cur.u32()? as usize;
            let dims = (0..rank)
                .map(|_| cur.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let count: usize = dims.iter().product();
            let values = cur
                .take(count * 8)?
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            store.insert(name, Tensor::new(dims, values)?)?;
        }
        Ok(store)
    }
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn at_end(&self) -> bool {
        self.pos == self.bytes.len()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    /// Glorot-uniform initialized.
    Weight { fan_in: usize, fan_out: usize },
    /// Zero initialized.
    Bias,
}

/// One entry of a layer-size description.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub kind: ParamKind,
}

impl ParamSpec {
    pub fn dense(prefix: &str, n_in: usize, n_out: usize) -> [ParamSpec; 2] {
        [
            ParamSpec {
                name: format!("{prefix}.weight"),
                dims: vec![n_out, n_in],
                kind: ParamKind::Weight {
                    fan_in: n_in,
                    fan_out: n_out,
                },
            },
            ParamSpec {
                name: format!("{prefix}.bias"),
                dims: vec![n_out],
                kind: ParamKind::Bias,
            },
        ]
    }

    pub fn conv(prefix: &str, kernel: usize, n_in: usize, n_out: usize) -> [ParamSpec; 2] {
        [
            ParamSpec {
                name: format!("{prefix}.weight"),
                dims: vec![n_out, kernel * n_in],
                kind: ParamKind::Weight {
                    fan_in: kernel * n_in,
                    fan_out: kernel * n_out,
                },
            },
            ParamSpec {
                name: format!("{prefix}.bias"),
                dims: vec![n_out],
                kind: ParamKind::Bias,
            },
        ]
    }
}

/// Glorot-uniform weights and zero biases. Each entry draws from its own
/// stream keyed by `(seed, name)`, so adding or resizing one layer leaves
/// the others untouched.
pub fn init_params(specs: &[ParamSpec], seed: u64) -> Result<ParamStore> {
    let mut store = ParamStore::new();
    for spec in specs {
        let count: usize = spec.dims.iter().product();
        let values = match spec.kind {
            ParamKind::Bias => vec![0.0; count],
            ParamKind::Weight { fan_in, fan_out } => {
                if fan_in + fan_out == 0 {
                    return Err(Error::InvalidShape(format!("{}: zero fan", spec.name)));
                }
                let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut rng = rng_for(seed, &["init", &spec.name]);
                (0..count).map(|_| rng.random_range(-bound..bound)).collect()
            }
        };
        store.insert(spec.name.clone(), Tensor::new(spec.dims.clone(), values)?)?;
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn specs() -> Vec<ParamSpec> {
        let mut v = ParamSpec::dense("fc", 128, 128).to_vec();
        v.extend(ParamSpec::conv("conv", 3, 4, 8));
        v
    }

    #[test]
    fn init_is_deterministic_with_zero_biases() {
        let a = init_params(&specs(), 11).unwrap();
        let b = init_params(&specs(), 11).unwrap();
        assert_eq!(a.to_checkpoint_bytes(), b.to_checkpoint_bytes());
        assert!(a.value("fc.bias").values().iter().all(|&v| v == 0.0));
        assert!(a.value("conv.bias").values().iter().all(|&v| v == 0.0));
        let c = init_params(&specs(), 12).unwrap();
        assert_ne!(a.value("fc.weight"), c.value("fc.weight"));
    }

    #[test]
    fn glorot_draw_is_centered_and_bounded() {
        let store = init_params(&specs(), 5).unwrap();
        let w = store.value("fc.weight").values();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        assert!(mean.abs() < 0.01, "mean {mean}");
        let bound = (6.0f64 / 256.0).sqrt();
        assert!(w.iter().all(|v| v.abs() <= bound));
    }

    #[test]
    fn checkpoint_layout_is_bit_exact() {
        let mut store = ParamStore::new();
        store.insert("b", Tensor::vector(vec![1.5])).unwrap();
        store
            .insert("a", Tensor::new(vec![1, 2], vec![-0.0, 2.0]).unwrap())
            .unwrap();
        let bytes = store.to_checkpoint_bytes();
        let mut expected = b"SLUC\x01".to_vec();
        expected.extend(1u32.to_le_bytes());
        expected.extend(b"a");
        expected.extend(2u32.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(2u32.to_le_bytes());
        expected.extend((-0.0f64).to_le_bytes());
        expected.extend(2.0f64.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(b"b");
        expected.extend(1u32.to_le_bytes());
        expected.extend(1u32.to_le_bytes());
        expected.extend(1.5f64.to_le_bytes());
        assert_eq!(bytes, expected);
        let back = ParamStore::from_checkpoint_bytes(&bytes).unwrap();
        assert_eq!(back.to_checkpoint_bytes(), bytes);
    }

    #[test]
    fn checkpoint_rejects_corruption() {
        let mut store = ParamStore::new();
        store.insert("w", Tensor::vector(vec![1.0, 2.0])).unwrap();
        let bytes = store.to_checkpoint_bytes();
        assert!(ParamStore::from_checkpoint_bytes(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(ParamStore::from_checkpoint_bytes(&bad).is_err());
        bad = bytes;
        bad[4] = 2;
        assert!(ParamStore::from_checkpoint_bytes(&bad).is_err());
    }

    #[test]
    fn grads_are_created_with_param_dims() {
        let mut store = init_params(&specs(), 1).unwrap();
        assert!(store.grad("fc.weight").is_none());
        store.grad_mut("fc.weight")[0] = 1.0;
        assert_eq!(store.grad("fc.weight").unwrap().dims(), &[128, 128]);
        store.zero_grad();
        for (_, e) in store.iter() {
            assert_eq!(e.grad.as_ref().unwrap().dims(), e.value.dims());
            assert!(e.grad.as_ref().unwrap().values().iter().all(|&g| g == 0.0));
        }
    }
}
