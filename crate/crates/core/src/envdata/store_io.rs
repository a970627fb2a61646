//! Trajectory container format.
//!
//! ```text
//! drdt3/1\n
//! {"format":"drdt3/1","env":...,"state_dim":...,"action_dim":...,"count":...,"stats":{...}}\n
//! count × [ T: u64 LE | states: T·d_s f64 LE | actions: T·d_a f64 LE | rewards: T f64 LE ]
//! ```
//!
//! Returns-to-go are never stored; they are recomputed on load.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::env::Env;
use super::{DatasetStats, EnvDataError, EnvId, Trajectory, TrajectoryStore};

pub const STORE_FORMAT: &str = "drdt3/1";

#[derive(Debug, Serialize, Deserialize)]
struct StoreHeader {
    format: String,
    env: EnvId,
    state_dim: usize,
    action_dim: usize,
    count: usize,
    stats: DatasetStats,
}

/// Little-endian reader over a byte slice that reports truncation.
pub(crate) struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub(crate) fn new(buf: &'a [u8]) -> Self {
        Self { buf, pos: 0 }
    }

    pub(crate) fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub(crate) fn line(&mut self) -> Option<&'a str> {
        let rest = &self.buf[self.pos..];
        let end = rest.iter().position(|&b| b == b'\n')?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).ok()
    }

    pub(crate) fn u64(&mut self) -> Option<u64> {
        let bytes = self.buf.get(self.pos..self.pos + 8)?;
        self.pos += 8;
        Some(u64::from_le_bytes(bytes.try_into().unwrap()))
    }

    pub(crate) fn f64s(&mut self, n: usize) -> Option<Vec<f64>> {
        let len = n.checked_mul(8)?;
        let bytes = self.buf.get(self.pos..self.pos.checked_add(len)?)?;
        self.pos += len;
        Some(
            bytes
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        )
    }
}

pub(crate) fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

/// Serialises a store to its canonical byte representation.
pub fn encode_store(store: &TrajectoryStore) -> Vec<u8> {
    let header = StoreHeader {
        format: STORE_FORMAT.to_string(),
        env: store.env,
        state_dim: store.state_dim,
        action_dim: store.action_dim,
        count: store.len(),
        stats: store.stats().clone(),
    };
    let mut out = Vec::new();
    out.extend_from_slice(STORE_FORMAT.as_bytes());
    out.push(b'\n');
    out.extend_from_slice(serde_json::to_string(&header).expect("header serialises").as_bytes());
    out.push(b'\n');
    for tr in store.trajectories() {
        out.extend_from_slice(&(tr.len() as u64).to_le_bytes());
        put_f64s(&mut out, tr.states());
        put_f64s(&mut out, tr.actions());
        put_f64s(&mut out, tr.rewards());
    }
    out
}

pub fn decode_store(bytes: &[u8]) -> Result<TrajectoryStore, EnvDataError> {
    let mut r = ByteReader::new(bytes);
    let magic = r.line().ok_or(EnvDataError::Truncated { record: None })?;
    if magic != STORE_FORMAT {
        return Err(EnvDataError::Version {
            found: magic.chars().take(32).collect(),
            expected: STORE_FORMAT,
        });
    }
    let header_line = r.line().ok_or(EnvDataError::Truncated { record: None })?;
    let header: StoreHeader = serde_json::from_str(header_line)
        .map_err(|e| EnvDataError::Header(e.to_string()))?;
    if header.format != STORE_FORMAT {
        return Err(EnvDataError::Version {
            found: header.format,
            expected: STORE_FORMAT,
        });
    }
    if header.state_dim != Env::state_dim(header.env) || header.action_dim != Env::action_dim(header.env)
    {
        return Err(EnvDataError::Dimension(format!(
            "header dims (d_s={}, d_a={}) do not match {}",
            header.state_dim, header.action_dim, header.env
        )));
    }
    let (ds, da) = (header.state_dim, header.action_dim);
    let mut trajs = Vec::with_capacity(header.count.min(1 << 16));
    for k in 0..header.count {
        let trunc = EnvDataError::Truncated { record: Some(k) };
        let t = r.u64().ok_or_else(|| trunc.clone())? as usize;
        if t == 0 {
            return Err(EnvDataError::Dimension(format!("record {k} has zero length")));
        }
        let states = r.f64s(t.saturating_mul(ds)).ok_or_else(|| trunc.clone())?;
        let actions = r.f64s(t.saturating_mul(da)).ok_or_else(|| trunc.clone())?;
        let rewards = r.f64s(t).ok_or(trunc)?;
        trajs.push(Trajectory::new(ds, da, states, actions, rewards)?);
    }
    if r.remaining() != 0 {
        return Err(EnvDataError::TrailingData(r.remaining()));
    }
    let mut store = TrajectoryStore::new(header.env, ds, da);
    store.extend(trajs)?;
    Ok(store)
}

pub fn save_store(store: &TrajectoryStore, path: &Path) -> Result<(), EnvDataError> {
    fs::write(path, encode_store(store)).map_err(|e| EnvDataError::io(path, e))
}

pub fn load_store(path: &Path) -> Result<TrajectoryStore, EnvDataError> {
    let bytes = fs::read(path).map_err(|e| EnvDataError::io(path, e))?;
    decode_store(&bytes)
}

#[derive(Debug, Serialize, Deserialize)]
struct TextRecord {
    states: Vec<Vec<f64>>,
    actions: Vec<Vec<f64>>,
    rewards: Vec<f64>,
}

/// Plain-text export: a header line, then one JSON record per trajectory.
pub fn export_text(store: &TrajectoryStore, path: &Path) -> Result<(), EnvDataError> {
    let mut f = fs::File::create(path).map_err(|e| EnvDataError::io(path, e))?;
    let mut body = format!(
        "# {STORE_FORMAT} env={} d_s={} d_a={}\n",
        store.env, store.state_dim, store.action_dim
    );
    for tr in store.trajectories() {
        let rec = TextRecord {
            states: tr.states().chunks(tr.state_dim).map(<[f64]>::to_vec).collect(),
            actions: tr.actions().chunks(tr.action_dim).map(<[f64]>::to_vec).collect(),
            rewards: tr.rewards().to_vec(),
        };
        body.push_str(&serde_json::to_string(&rec).expect("record serialises"));
        body.push('\n');
    }
    f.write_all(body.as_bytes()).map_err(|e| EnvDataError::io(path, e))
}

pub fn import_text(path: &Path) -> Result<TrajectoryStore, EnvDataError> {
    let text = fs::read_to_string(path).map_err(|e| EnvDataError::io(path, e))?;
    let mut lines = text.lines();
    let head = lines.next().ok_or(EnvDataError::Truncated { record: None })?;
    let env: EnvId = head
        .split_whitespace()
        .find_map(|f| f.strip_prefix("env="))
        .ok_or_else(|| EnvDataError::Header(format!("no env in {head:?}")))?
        .parse()?;
    let (ds, da) = (Env::state_dim(env), Env::action_dim(env));
    let mut store = TrajectoryStore::new(env, ds, da);
    let mut trajs = Vec::new();
    for (k, line) in lines.enumerate() {
        let rec: TextRecord = serde_json::from_str(line)
            .map_err(|e| EnvDataError::Header(format!("record {k}: {e}")))?;
        trajs.push(Trajectory::new(
            ds,
            da,
            rec.states.concat(),
            rec.actions.concat(),
            rec.rewards,
        )?);
    }
    store.extend(trajs)?;
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envdata::{generate_dataset, DatasetTier};

    #[test]
    fn canonical_round_trip() {
        let store = generate_dataset(EnvId::PointReach, DatasetTier::MediumReplay, 5, 1).unwrap();
        let bytes = encode_store(&store);
        let back = decode_store(&bytes).unwrap();
        assert_eq!(back, store);
        assert_eq!(encode_store(&back), bytes);
    }

    #[test]
    fn empty_store_round_trip() {
        let store = TrajectoryStore::new(EnvId::StitchChain, 1, 1);
        let back = decode_store(&encode_store(&store)).unwrap();
        assert_eq!(back.env, EnvId::StitchChain);
        assert_eq!((back.state_dim, back.action_dim), (1, 1));
        assert!(back.is_empty());
    }

    #[test]
    fn truncation_and_version_errors() {
        let store = generate_dataset(EnvId::StitchChain, DatasetTier::Stitch, 4, 1).unwrap();
        let bytes = encode_store(&store);
        for cut in [bytes.len() - 1, bytes.len() - 9, 10] {
            assert!(matches!(
                decode_store(&bytes[..cut]),
                Err(EnvDataError::Truncated { .. })
            ));
        }
        let mut bad = bytes.clone();
        bad[6] = b'9';
        assert!(matches!(decode_store(&bad), Err(EnvDataError::Version { .. })));
        let mut long = bytes;
        long.push(0);
        assert!(matches!(decode_store(&long), Err(EnvDataError::TrailingData(1))));
    }

    #[test]
    fn text_export_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let store = generate_dataset(EnvId::StitchChain, DatasetTier::Stitch, 4, 2).unwrap();
        export_text(&store, &path).unwrap();
        assert_eq!(import_text(&path).unwrap(), store);
    }
}
