use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{Network, TrainableMask};

/// Which parameterized layers (conv, batch norm, dense) stay trainable.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FreezePolicy {
    /// Only the last `n` parameterized layers, counted from the output.
    FreezeAllButLast(usize),
    FreezeNone,
    FreezeAll,
}

impl fmt::Display for FreezePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FreezePolicy::FreezeAllButLast(n) => write!(f, "last:{n}"),
            FreezePolicy::FreezeNone => f.write_str("none"),
            FreezePolicy::FreezeAll => f.write_str("all"),
        }
    }
}

/// Accepts `none`, `all` and `last:N`.
impl FromStr for FreezePolicy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(FreezePolicy::FreezeNone),
            "all" => Ok(FreezePolicy::FreezeAll),
            _ => s
                .strip_prefix("last:")
                .and_then(|n| n.parse().ok())
                .map(FreezePolicy::FreezeAllButLast)
                .ok_or_else(|| Error::InvalidArgument(format!("bad freeze policy `{s}` (use none, all or last:N)"))),
        }
    }
}

pub fn apply_freeze(network: &Network, policy: FreezePolicy) -> Result<TrainableMask> {
    let units = network.units().len();
    let trainable_tail = match policy {
        FreezePolicy::FreezeNone => units,
        FreezePolicy::FreezeAll => 0,
        FreezePolicy::FreezeAllButLast(n) if n == 0 || n > units => {
            return Err(Error::InvalidArgument(format!(
                "cannot keep the last {n} layers trainable: the network has {units} parameterized layers"
            )))
        }
        FreezePolicy::FreezeAllButLast(n) => n,
    };
    Ok(TrainableMask {
        units: (0..units).map(|i| i >= units - trainable_tail).collect(),
    })
}
