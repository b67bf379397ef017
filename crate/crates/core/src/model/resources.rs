//! Multi-dimensional resource vectors in integer milli-units.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Number of allocatable dimensions.
pub const DIMENSIONS: usize = 5;

/// Names used in the textual form (`accel=500,cpu=2000`).
pub const COMPONENT_NAMES: [&str; DIMENSIONS] = ["accel", "cpu", "mem", "storage", "net"];

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ResourceError {
    #[error("arithmetic overflow in resource component `{0}`")]
    Overflow(&'static str),
    #[error("invalid resource vector `{0}`: {1}")]
    Parse(String, String),
}

/// Capacity or demand over accelerator, CPU, memory, storage and network.
///
/// One accelerator is 1000 `accel_milli`, so a two-GPU node reports 2000.
/// Components are unsigned, which makes the non-negativity invariant
/// structural. Missing fields deserialize to zero.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResourceVector {
    pub accel_milli: u64,
    pub cpu_milli: u64,
    pub mem_mb: u64,
    pub storage_gb: u64,
    pub net_mbps: u64,
}

impl ResourceVector {
    pub const ZERO: ResourceVector = ResourceVector {
        accel_milli: 0,
        cpu_milli: 0,
        mem_mb: 0,
        storage_gb: 0,
        net_mbps: 0,
    };

    pub const fn new(accel_milli: u64, cpu_milli: u64, mem_mb: u64, storage_gb: u64, net_mbps: u64) -> Self {
        Self {
            accel_milli,
            cpu_milli,
            mem_mb,
            storage_gb,
            net_mbps,
        }
    }

    /// Accelerator-only vector.
    pub const fn accel(accel_milli: u64) -> Self {
        Self::new(accel_milli, 0, 0, 0, 0)
    }

    pub const fn components(&self) -> [u64; DIMENSIONS] {
        [
            self.accel_milli,
            self.cpu_milli,
            self.mem_mb,
            self.storage_gb,
            self.net_mbps,
        ]
    }

    pub const fn from_components(c: [u64; DIMENSIONS]) -> Self {
        Self::new(c[0], c[1], c[2], c[3], c[4])
    }

    fn zip_with(&self, other: &Self, f: impl Fn(u64, u64) -> u64) -> Self {
        let (a, b) = (self.components(), other.components());
        Self::from_components(std::array::from_fn(|i| f(a[i], b[i])))
    }

    pub fn is_zero(&self) -> bool {
        *self == Self::ZERO
    }

    /// Component-wise sum; overflow of any component is an error.
    pub fn checked_add(&self, other: &Self) -> Result<Self, ResourceError> {
        let (a, b) = (self.components(), other.components());
        let mut out = [0u64; DIMENSIONS];
        for i in 0..DIMENSIONS {
            out[i] = a[i]
                .checked_add(b[i])
                .ok_or(ResourceError::Overflow(COMPONENT_NAMES[i]))?;
        }
        Ok(Self::from_components(out))
    }

    /// Component-wise sum clamped at `u64::MAX`. Used by accounting paths
    /// whose inputs are already bounded by node capacities.
    pub fn saturating_add(&self, other: &Self) -> Self {
        self.zip_with(other, u64::saturating_add)
    }

    /// Per-component `max(a - b, 0)`.
    pub fn saturating_sub(&self, other: &Self) -> Self {
        self.zip_with(other, u64::saturating_sub)
    }

    /// True iff every component is at most the matching component of `other`.
    pub fn fits_in(&self, other: &Self) -> bool {
        self.components()
            .iter()
            .zip(other.components().iter())
            .all(|(a, b)| a <= b)
    }

    pub fn component_min(&self, other: &Self) -> Self {
        self.zip_with(other, u64::min)
    }

    pub fn component_max(&self, other: &Self) -> Self {
        self.zip_with(other, u64::max)
    }

    /// Scales every component by `fraction`, rounding to the nearest unit.
    pub fn scale(&self, fraction: f64) -> Self {
        let c = self.components();
        Self::from_components(std::array::from_fn(|i| {
            (c[i] as f64 * fraction).round().max(0.0) as u64
        }))
    }

    /// Sum of components normalized by `reference`, skipping dimensions
    /// where the reference is zero. This is the best-fit score.
    pub fn normalized_sum(&self, reference: &Self) -> f64 {
        self.components()
            .iter()
            .zip(reference.components().iter())
            .filter(|(_, r)| **r > 0)
            .map(|(v, r)| *v as f64 / *r as f64)
            .sum()
    }

    pub fn sum<'a>(items: impl IntoIterator<Item = &'a ResourceVector>) -> Self {
        items.into_iter().fold(Self::ZERO, |acc, v| acc.saturating_add(v))
    }
}

/// Component-wise sum, failing on overflow.
pub fn rv_add(a: &ResourceVector, b: &ResourceVector) -> Result<ResourceVector, ResourceError> {
    a.checked_add(b)
}

pub fn rv_sub_saturating(a: &ResourceVector, b: &ResourceVector) -> ResourceVector {
    a.saturating_sub(b)
}

pub fn rv_fits(a: &ResourceVector, b: &ResourceVector) -> bool {
    a.fits_in(b)
}

impl fmt::Display for ResourceVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = COMPONENT_NAMES
            .iter()
            .zip(self.components())
            .filter(|(_, v)| *v != 0)
            .map(|(n, v)| format!("{n}={v}"))
            .collect();
        if parts.is_empty() {
            write!(f, "accel=0")
        } else {
            write!(f, "{}", parts.join(","))
        }
    }
}

impl FromStr for ResourceVector {
    type Err = ResourceError;

    /// Parses `accel=500,cpu=2000`; omitted components are zero.
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut c = [0u64; DIMENSIONS];
        for part in s.split(',').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, value) = part
                .split_once('=')
                .ok_or_else(|| ResourceError::Parse(s.to_string(), format!("expected name=value, got `{part}`")))?;
            let idx = COMPONENT_NAMES
                .iter()
                .position(|n| *n == name.trim())
                .ok_or_else(|| ResourceError::Parse(s.to_string(), format!("unknown component `{name}`")))?;
            c[idx] = value
                .trim()
                .parse()
                .map_err(|e| ResourceError::Parse(s.to_string(), format!("{name}: {e}")))?;
        }
        Ok(Self::from_components(c))
    }
}
