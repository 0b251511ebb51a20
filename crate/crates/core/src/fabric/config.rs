//! Static fabric configuration for the socket transport.
//!
//! ```text
//! # comment
//! lid 1 host 127.0.0.1 port 18516
//! lid 2 host 127.0.0.1 port 18517
//! faults drop=0.1 dup=0 reorder=0 seed=7
//! ```

use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use super::faults::{FaultProfile, FaultSpecError};
use crate::verbs::Lid;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("line {line}: {source}")]
    Faults { line: usize, source: FaultSpecError },
    #[error("lid {0} listed twice")]
    DuplicateLid(Lid),
    #[error("reading fabric config: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LidEntry {
    pub lid: Lid,
    pub host: String,
    pub port: u16,
}

#[derive(Clone, Debug, PartialEq)]
pub struct FabricConfig {
    pub entries: Vec<LidEntry>,
    pub faults: FaultProfile,
}

pub const DEFAULT_FABRIC_PORTS: [u16; 2] = [18516, 18517];

impl Default for FabricConfig {
    /// Two LIDs on localhost, enough for one client and one server.
    fn default() -> Self {
        FabricConfig {
            entries: DEFAULT_FABRIC_PORTS
                .iter()
                .enumerate()
                .map(|(i, &port)| LidEntry { lid: i as Lid + 1, host: "127.0.0.1".into(), port })
                .collect(),
            faults: FaultProfile::none(),
        }
    }
}

impl FabricConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        std::fs::read_to_string(path)?.parse()
    }

    pub fn entry(&self, lid: Lid) -> Option<&LidEntry> {
        self.entries.iter().find(|e| e.lid == lid)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!("lid {} host {} port {}\n", e.lid, e.host, e.port));
        }
        if !self.faults.is_lossless() {
            out.push_str(&format!("faults {}\n", self.faults));
        }
        out
    }
}

impl FromStr for FabricConfig {
    type Err = ConfigError;

    fn from_str(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = FabricConfig { entries: Vec::new(), faults: FaultProfile::none() };
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let syntax = |msg: &str| ConfigError::Syntax { line, msg: msg.into() };
            let words: Vec<&str> = content.split_whitespace().collect();
            match words[0] {
                "lid" => {
                    let ["lid", lid, "host", host, "port", port] = words[..] else {
                        return Err(syntax("expected `lid <n> host <name> port <n>`"));
                    };
                    let lid: Lid = lid.parse().map_err(|_| syntax("bad lid"))?;
                    if lid == 0 {
                        return Err(syntax("lid 0 is reserved"));
                    }
                    let port: u16 = port.parse().map_err(|_| syntax("bad port"))?;
                    if cfg.entry(lid).is_some() {
                        return Err(ConfigError::DuplicateLid(lid));
                    }
                    cfg.entries.push(LidEntry { lid, host: host.into(), port });
                }
                "faults" => {
                    let rest = content["faults".len()..].trim();
                    cfg.faults = rest.parse().map_err(|source| ConfigError::Faults { line, source })?;
                }
                other => return Err(syntax(&format!("unknown directive `{other}`"))),
            }
        }
        Ok(cfg)
    }
}
