use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// One `(s, a, r, s')` record. Field names double as the JSONL keys.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct Transition<T> {
    pub s: Vec<T>,
    pub a: usize,
    pub r: T,
    pub sp: Vec<T>,
}

impl<T: Scalar> Transition<T> {
    pub fn new(s: Vec<T>, a: usize, r: T, sp: Vec<T>) -> Self {
        Self { s, a, r, sp }
    }
}

/// Sidecar metadata stored next to a JSONL dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(bound = "T: Scalar")]
pub struct DatasetHeader<T> {
    pub s0: Vec<T>,
    pub num_actions: usize,
    pub gamma: T,
}

/// Immutable offline dataset; the empirical measure of the behavior data.
#[derive(Clone, Debug, PartialEq)]
pub struct OfflineDataset<T> {
    transitions: Vec<Transition<T>>,
    initial_state: Vec<T>,
    num_actions: usize,
    discount: T,
}

impl<T: Scalar> OfflineDataset<T> {
    pub fn new(transitions: Vec<Transition<T>>, initial_state: Vec<T>, num_actions: usize, discount: T) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if num_actions == 0 {
            return Err(Error::Schema("num_actions must be positive".into()));
        }
        if !(discount >= T::zero() && discount < T::one()) {
            return Err(Error::Schema(format!("discount {discount} not in [0, 1)")));
        }
        let dim = initial_state.len();
        for (i, t) in transitions.iter().enumerate() {
            validate_row(t, dim, num_actions).map_err(|m| Error::Schema(format!("row {i}: {m}")))?;
        }
        Ok(Self {
            transitions,
            initial_state,
            num_actions,
            discount,
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    pub fn transitions(&self) -> &[Transition<T>] {
        &self.transitions
    }

    pub fn initial_state(&self) -> &[T] {
        &self.initial_state
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn discount(&self) -> T {
        self.discount
    }

    pub fn state_dim(&self) -> usize {
        self.initial_state.len()
    }

    pub fn header(&self) -> DatasetHeader<T> {
        DatasetHeader {
            s0: self.initial_state.clone(),
            num_actions: self.num_actions,
            gamma: self.discount,
        }
    }

    /// The first `n` rows, for nested sample-size experiments.
    pub fn prefix(&self, n: usize) -> Result<Self> {
        let n = n.min(self.len());
        Self::new(
            self.transitions[..n].to_vec(),
            self.initial_state.clone(),
            self.num_actions,
            self.discount,
        )
    }

    /// Rows at the given indices (repeats allowed), as used by the bootstrap.
    pub fn select(&self, idx: &[usize]) -> Result<Self> {
        let rows = idx.iter().map(|&i| self.transitions[i].clone()).collect();
        Self::new(rows, self.initial_state.clone(), self.num_actions, self.discount)
    }

    /// SHA-256 over the canonical serialized form (header line plus rows).
    pub fn content_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_vec(&self.header()).expect("header serializes"));
        h.update(b"\n");
        for t in &self.transitions {
            h.update(serde_json::to_vec(t).expect("row serializes"));
            h.update(b"\n");
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }

    pub fn map_scalar<U: Scalar>(&self) -> OfflineDataset<U> {
        let cv = |v: &[T]| v.iter().map(|x| U::of(x.to_f64_lossy())).collect::<Vec<U>>();
        OfflineDataset {
            transitions: self
                .transitions
                .iter()
                .map(|t| Transition::new(cv(&t.s), t.a, U::of(t.r.to_f64_lossy()), cv(&t.sp)))
                .collect(),
            initial_state: cv(&self.initial_state),
            num_actions: self.num_actions,
            discount: U::of(self.discount.to_f64_lossy()),
        }
    }
}

fn validate_row<T: Scalar>(t: &Transition<T>, dim: usize, num_actions: usize) -> std::result::Result<(), String> {
    if t.s.len() != dim || t.sp.len() != dim {
        return Err(format!(
            "state dimension {}/{} differs from s0 dimension {dim}",
            t.s.len(),
            t.sp.len()
        ));
    }
    if t.a >= num_actions {
        return Err(format!("action {} >= num_actions {num_actions}", t.a));
    }
    if !t.r.is_finite() {
        return Err(format!("non-finite reward {}", t.r));
    }
    if t.s.iter().chain(&t.sp).any(|x| !x.is_finite()) {
        return Err("non-finite state entry".into());
    }
    Ok(())
}

/// `data.jsonl` -> `data.header.json`.
pub fn header_path(path: &Path) -> PathBuf {
    path.with_extension("header.json")
}

pub fn save_dataset<T: Scalar>(ds: &OfflineDataset<T>, path: &Path) -> Result<()> {
    let dim = ds.state_dim();
    for (i, t) in ds.transitions.iter().enumerate() {
        validate_row(t, dim, ds.num_actions).map_err(|m| Error::Schema(format!("refusing to write row {i}: {m}")))?;
    }
    let file = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    for t in &ds.transitions {
        serde_json::to_writer(&mut w, t).map_err(|e| Error::Schema(e.to_string()))?;
        w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    let hp = header_path(path);
    let header = serde_json::to_string_pretty(&ds.header()).map_err(|e| Error::Schema(e.to_string()))?;
    fs::write(&hp, header + "\n").map_err(|e| Error::io(&hp, e))?;
    Ok(())
}

pub fn load_dataset<T: Scalar>(path: &Path) -> Result<OfflineDataset<T>> {
    let hp = header_path(path);
    let htext = fs::read_to_string(&hp).map_err(|e| Error::io(&hp, e))?;
    let header: DatasetHeader<T> =
        serde_json::from_str(&htext).map_err(|e| Error::Schema(format!("header {}: {e}", hp.display())))?;
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rows = Vec::new();
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let t: Transition<T> = serde_json::from_str(&line).map_err(|e| Error::Parse {
            line: i + 1,
            msg: e.to_string(),
        })?;
        validate_row(&t, header.s0.len(), header.num_actions).map_err(|m| Error::Schema(format!("line {}: {m}", i + 1)))?;
        rows.push(t);
    }
    OfflineDataset::new(rows, header.s0, header.num_actions, header.gamma)
}
