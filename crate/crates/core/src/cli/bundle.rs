//! Policy bundle container.
//!
//! ```text
//! drdt3-bundle/1\n
//! {"format":...,"env":...,"seed":...,"dt_baseline":...,"config":{...},"policy":{...},
//!  "params":[{"name":...,"shape":[...]},...],"resume":null|{...}}\n
//! parameter values, table order, f64 LE
//! [resume only] first moments, then second moments, same order
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::envdata::{put_f64s, ByteReader, EnvId};
use crate::numerics::{DArray, ParamStore};
use crate::policy::{Policy, PolicySpec};
use crate::training::{AdamW, RngState, TrainConfig, TrainState};

use super::CliError;

pub const BUNDLE_FORMAT: &str = "drdt3-bundle/1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ParamEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ResumeHeader {
    adam_t: u64,
    rng_seed: String,
    rng_stream: u64,
    rng_word_pos: String,
    update: usize,
    epoch: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct BundleHeader {
    format: String,
    env: EnvId,
    seed: u64,
    dt_baseline: bool,
    config: TrainConfig,
    policy: PolicySpec,
    params: Vec<ParamEntry>,
    resume: Option<ResumeHeader>,
}

/// Optimiser and generator state carried by checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct ResumeState {
    pub optimizer: AdamW,
    pub rng: RngState,
    pub update: usize,
    pub epoch: usize,
}

/// A trained policy plus everything needed to rebuild, evaluate or resume it.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyBundle {
    pub env: EnvId,
    pub seed: u64,
    pub config: TrainConfig,
    pub policy: Policy,
    pub resume: Option<ResumeState>,
}

impl PolicyBundle {
    /// Bundle of a training state; keeps the optimiser so the run can resume.
    pub fn from_state(env: EnvId, config: &TrainConfig, state: &TrainState) -> Self {
        Self {
            env,
            seed: config.seed,
            config: config.clone(),
            policy: state.policy.clone(),
            resume: Some(ResumeState {
                optimizer: state.optimizer.clone(),
                rng: state.rng,
                update: state.update,
                epoch: state.epoch,
            }),
        }
    }

    /// Whether this bundle is the plain decision-transformer baseline.
    pub fn is_dt_baseline(&self) -> bool {
        self.policy.spec.dt3.dt_mode
    }

    pub fn train_state(&self) -> Option<TrainState> {
        self.resume.as_ref().map(|r| TrainState {
            policy: self.policy.clone(),
            optimizer: r.optimizer.clone(),
            rng: r.rng,
            update: r.update,
            epoch: r.epoch,
        })
    }

    pub fn encode(&self) -> Vec<u8> {
        let params = &self.policy.params;
        let header = BundleHeader {
            format: BUNDLE_FORMAT.to_string(),
            env: self.env,
            seed: self.seed,
            dt_baseline: self.is_dt_baseline(),
            config: self.config.clone(),
            policy: self.policy.spec.clone(),
            params: params
                .iter()
                .map(|(name, a)| ParamEntry {
                    name: name.to_string(),
                    shape: a.shape().to_vec(),
                })
                .collect(),
            resume: self.resume.as_ref().map(|r| ResumeHeader {
                adam_t: r.optimizer.t,
                rng_seed: hex::encode(r.rng.seed),
                rng_stream: r.rng.stream,
                rng_word_pos: r.rng.word_pos.to_string(),
                update: r.update,
                epoch: r.epoch,
            }),
        };
        let mut out = Vec::new();
        out.extend_from_slice(BUNDLE_FORMAT.as_bytes());
        out.push(b'\n');
        out.extend_from_slice(serde_json::to_string(&header).expect("header serialises").as_bytes());
        out.push(b'\n');
        for (_, a) in params.iter() {
            put_f64s(&mut out, a.values());
        }
        if let Some(r) = &self.resume {
            for m in &r.optimizer.m {
                put_f64s(&mut out, m);
            }
            for v in &r.optimizer.v {
                put_f64s(&mut out, v);
            }
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, CliError> {
        let bad = |m: String| CliError::Format(m);
        let mut r = ByteReader::new(bytes);
        let magic = r.line().ok_or_else(|| bad("bundle truncated in header".into()))?;
        if magic != BUNDLE_FORMAT {
            return Err(bad(format!(
                "unsupported bundle version {:?} (expected {BUNDLE_FORMAT:?})",
                magic.chars().take(32).collect::<String>()
            )));
        }
        let line = r.line().ok_or_else(|| bad("bundle truncated in header".into()))?;
        let header: BundleHeader =
            serde_json::from_str(line).map_err(|e| bad(format!("malformed bundle header: {e}")))?;
        if header.format != BUNDLE_FORMAT {
            return Err(bad(format!("unsupported bundle version {:?}", header.format)));
        }
        let mut stored = ParamStore::new();
        for entry in &header.params {
            let n: usize = entry.shape.iter().product();
            let values = r
                .f64s(n)
                .ok_or_else(|| bad(format!("bundle truncated in parameter {}", entry.name)))?;
            stored.add(entry.name.clone(), DArray::new(&entry.shape, values).map_err(|e| bad(e.to_string()))?);
        }
        let policy = Policy::with_params(header.policy.clone(), &stored)
            .map_err(|e| bad(format!("bundle parameters do not fit its architecture: {e}")))?;
        let resume = match header.resume {
            None => None,
            Some(h) => {
                let mut moments = |what: &str| -> Result<Vec<Vec<f64>>, CliError> {
                    header
                        .params
                        .iter()
                        .map(|e| {
                            r.f64s(e.shape.iter().product()).ok_or_else(|| {
                                bad(format!("bundle truncated in {what} moments of {}", e.name))
                            })
                        })
                        .collect()
                };
                let m = moments("first")?;
                let v = moments("second")?;
                let mut optimizer = AdamW::new(&policy.params, header.config.adam_hyper());
                optimizer.t = h.adam_t;
                optimizer.m = m;
                optimizer.v = v;
                let seed: [u8; 32] = hex::decode(&h.rng_seed)
                    .ok()
                    .and_then(|s| s.try_into().ok())
                    .ok_or_else(|| bad("malformed generator seed".into()))?;
                let word_pos = h
                    .rng_word_pos
                    .parse()
                    .map_err(|_| bad("malformed generator position".into()))?;
                Some(ResumeState {
                    optimizer,
                    rng: RngState {
                        seed,
                        stream: h.rng_stream,
                        word_pos,
                    },
                    update: h.update,
                    epoch: h.epoch,
                })
            }
        };
        if r.remaining() != 0 {
            return Err(bad(format!("{} unexpected trailing bytes in bundle", r.remaining())));
        }
        Ok(Self {
            env: header.env,
            seed: header.seed,
            config: header.config,
            policy,
            resume,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), CliError> {
        fs::write(path, self.encode()).map_err(|e| CliError::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let bytes = fs::read(path).map_err(|e| CliError::io(path, e))?;
        Self::decode(&bytes)
    }
}
