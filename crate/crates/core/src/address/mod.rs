//! Address and prefix arithmetic over a fixed-width address universe.
//!
//! Addresses are stored as unsigned integers holding the top `effective_bits`
//! bits of the wire address. IPv6 input is truncated at parse time, so every
//! module downstream of this one is family-agnostic.

mod capacity;
mod prefix;
mod tree;

use std::fmt;
use std::io::BufRead;
use std::net::{IpAddr, Ipv4Addr, Ipv6Addr};

use serde::{Deserialize, Serialize};

pub use capacity::CapacityMap;
pub use prefix::{range_to_prefixes, Dyadic, DyadicInterval, Prefix};
pub use tree::{
    build_mass_tree, zoom_csv, zoom_path, LevelCounts, PrefixMassTree, ZoomLevel, DEFAULT_ZOOM_BITS,
};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Family {
    V4,
    V6,
}

impl Family {
    /// Width of the wire address in bits.
    pub fn wire_bits(self) -> u32 {
        match self {
            Family::V4 => 32,
            Family::V6 => 128,
        }
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Family::V4 => f.write_str("IPv4"),
            Family::V6 => f.write_str("IPv6"),
        }
    }
}

/// Address family plus the number of leading bits under analysis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AddressUniverse {
    family: Family,
    effective_bits: u32,
}

impl AddressUniverse {
    pub const DEFAULT_V6_BITS: u32 = 64;

    pub fn v4() -> Self {
        AddressUniverse {
            family: Family::V4,
            effective_bits: 32,
        }
    }

    pub fn v6(effective_bits: u32) -> Result<Self> {
        Self::new(Family::V6, effective_bits)
    }

    pub fn new(family: Family, effective_bits: u32) -> Result<Self> {
        if !(1..=128).contains(&effective_bits) {
            return Err(Error::InvalidUniverse(format!(
                "effective bits must lie in 1..=128, got {effective_bits}"
            )));
        }
        if family == Family::V4 && effective_bits != 32 {
            return Err(Error::InvalidUniverse(format!(
                "IPv4 universes are 32 bits wide, got {effective_bits}"
            )));
        }
        Ok(AddressUniverse {
            family,
            effective_bits,
        })
    }

    pub fn family(&self) -> Family {
        self.family
    }

    pub fn bits(&self) -> u32 {
        self.effective_bits
    }

    /// Largest representable address value.
    pub fn max_value(&self) -> u128 {
        low_mask(self.effective_bits)
    }

    pub fn contains(&self, value: u128) -> bool {
        value <= self.max_value()
    }

    /// Number of addresses under a prefix of length `len`, saturating at
    /// `u128::MAX` for the full 128-bit space.
    pub fn span(&self, len: u32) -> u128 {
        pow2_saturating(self.effective_bits - len.min(self.effective_bits))
    }

    /// Convert a wire address into its stored value.
    pub fn value_of(&self, addr: IpAddr) -> Option<u128> {
        match (self.family, addr) {
            (Family::V4, IpAddr::V4(a)) => Some(u32::from(a) as u128),
            (Family::V6, IpAddr::V6(a)) => Some(shr(u128::from(a), 128 - self.effective_bits)),
            _ => None,
        }
    }

    /// Render a stored value back into address text (truncated bits are zero).
    pub fn format(&self, value: u128) -> String {
        match self.family {
            Family::V4 => Ipv4Addr::from(value as u32).to_string(),
            Family::V6 => Ipv6Addr::from(shl(value, 128 - self.effective_bits)).to_string(),
        }
    }

    /// Parse address text, truncating IPv6 to the effective bits.
    pub fn parse_value(&self, text: &str) -> Option<std::result::Result<u128, Family>> {
        let addr: IpAddr = text.trim().parse().ok()?;
        Some(self.value_of(addr).ok_or(self.family))
    }
}

/// A deduplicated, sorted set of addresses within one universe.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AddressSet {
    universe: AddressUniverse,
    values: Vec<u128>,
}

impl AddressSet {
    pub fn new(universe: AddressUniverse, mut values: Vec<u128>) -> Result<Self> {
        if let Some(&v) = values.iter().find(|&&v| !universe.contains(v)) {
            return Err(Error::InvalidUniverse(format!(
                "value {v:#x} lies outside a {}-bit universe",
                universe.bits()
            )));
        }
        values.sort_unstable();
        values.dedup();
        Ok(AddressSet { universe, values })
    }

    pub fn universe(&self) -> AddressUniverse {
        self.universe
    }

    /// Sorted, distinct address values.
    pub fn values(&self) -> &[u128] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn contains(&self, value: u128) -> bool {
        self.values.binary_search(&value).is_ok()
    }

    /// One address per line, in ascending order.
    pub fn to_text(&self) -> String {
        let mut out = String::with_capacity(self.values.len() * 16);
        for &v in &self.values {
            out.push_str(&self.universe.format(v));
            out.push('\n');
        }
        out
    }
}

/// Read one address per line. Blank lines and lines starting with `#` are skipped.
pub fn parse_addresses<R: BufRead>(reader: R, universe: AddressUniverse) -> Result<AddressSet> {
    let values = parse_address_list(reader, universe)?;
    AddressSet::new(universe, values)
}

/// Like [`parse_addresses`] but keeps input order and duplicates.
pub fn parse_address_list<R: BufRead>(reader: R, universe: AddressUniverse) -> Result<Vec<u128>> {
    let mut values = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|_| Error::Parse {
            line: line_no,
            text: String::from("<unreadable>"),
        })?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        match universe.parse_value(text) {
            Some(Ok(v)) => values.push(v),
            Some(Err(expected)) => {
                return Err(Error::FamilyMismatch {
                    line: line_no,
                    expected,
                })
            }
            None => {
                return Err(Error::Parse {
                    line: line_no,
                    text: text.to_string(),
                })
            }
        }
    }
    Ok(values)
}

pub(crate) fn shr(v: u128, s: u32) -> u128 {
    v.checked_shr(s).unwrap_or(0)
}

pub(crate) fn shl(v: u128, s: u32) -> u128 {
    v.checked_shl(s).unwrap_or(0)
}

pub(crate) fn low_mask(bits: u32) -> u128 {
    if bits >= 128 {
        u128::MAX
    } else {
        (1u128 << bits) - 1
    }
}

pub(crate) fn pow2_saturating(e: u32) -> u128 {
    if e >= 128 {
        u128::MAX
    } else {
        1u128 << e
    }
}
