use std::cmp::Ordering;
use std::fmt;
use std::net::IpAddr;

use serde::{Deserialize, Serialize};

use super::{low_mask, shl, shr, AddressUniverse, Family};
use crate::error::{Error, Result};

/// A prefix of length `len`, identified by its leading bits `index`.
///
/// `index` holds exactly `len` bits, so the prefix is the dyadic interval
/// `[index / 2^len, (index + 1) / 2^len)` independent of the universe width.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Prefix {
    len: u32,
    index: u128,
}

impl Prefix {
    pub fn new(index: u128, len: u32) -> Result<Self> {
        if len > 128 || (len < 128 && index >> len != 0) {
            return Err(Error::InvalidPrefix(format!(
                "index {index:#x} does not fit in /{len}"
            )));
        }
        Ok(Prefix { len, index })
    }

    pub const fn root() -> Self {
        Prefix { len: 0, index: 0 }
    }

    /// The length-`len` prefix containing a stored address value.
    pub fn of_value(value: u128, len: u32, universe: AddressUniverse) -> Self {
        debug_assert!(len <= universe.bits());
        Prefix {
            len,
            index: shr(value, universe.bits() - len),
        }
    }

    #[allow(clippy::len_without_is_empty)]
    pub fn len(&self) -> u32 {
        self.len
    }

    pub fn index(&self) -> u128 {
        self.index
    }

    /// Lowest stored address value inside the prefix.
    pub fn first_value(&self, universe: AddressUniverse) -> u128 {
        shl(self.index, universe.bits() - self.len)
    }

    /// Highest stored address value inside the prefix.
    pub fn last_value(&self, universe: AddressUniverse) -> u128 {
        self.first_value(universe) | low_mask(universe.bits() - self.len)
    }

    pub fn contains(&self, other: &Prefix) -> bool {
        self.len <= other.len && shr(other.index, other.len - self.len) == self.index
    }

    pub fn contains_value(&self, value: u128, universe: AddressUniverse) -> bool {
        shr(value, universe.bits() - self.len) == self.index
    }

    pub fn parent(&self) -> Option<Prefix> {
        (self.len > 0).then(|| Prefix {
            len: self.len - 1,
            index: self.index >> 1,
        })
    }

    pub fn child(&self, right: bool) -> Prefix {
        debug_assert!(self.len < 128);
        Prefix {
            len: self.len + 1,
            index: (self.index << 1) | right as u128,
        }
    }

    /// The ancestor (or self) of length `len`.
    pub fn truncate(&self, len: u32) -> Prefix {
        debug_assert!(len <= self.len);
        Prefix {
            len,
            index: shr(self.index, self.len - len),
        }
    }

    pub fn dyadic_interval(&self) -> DyadicInterval {
        let lo = Dyadic::new(self.index, self.len);
        let hi = match self.index.checked_add(1) {
            Some(n) => Dyadic::new(n, self.len),
            None => Dyadic::ONE,
        };
        DyadicInterval { lo, hi }
    }

    /// Parse `addr/len` text. Host bits must be zero and the length must fit
    /// inside the universe.
    pub fn parse(text: &str, universe: AddressUniverse) -> Result<Prefix> {
        let bad = || Error::InvalidPrefix(text.to_string());
        let (addr, len) = text.trim().split_once('/').ok_or_else(bad)?;
        let addr: IpAddr = addr.parse().map_err(|_| bad())?;
        let len: u32 = len.parse().map_err(|_| bad())?;
        let (wire, family) = match addr {
            IpAddr::V4(a) => (u32::from(a) as u128, Family::V4),
            IpAddr::V6(a) => (u128::from(a), Family::V6),
        };
        if family != universe.family() || len > universe.bits() {
            return Err(bad());
        }
        let wire_bits = family.wire_bits();
        if wire & low_mask(wire_bits - len) != 0 {
            return Err(bad());
        }
        Ok(Prefix {
            len,
            index: shr(wire, wire_bits - len),
        })
    }

    /// CIDR text for the prefix.
    pub fn display(&self, family: Family) -> PrefixDisplay {
        PrefixDisplay {
            prefix: *self,
            family,
        }
    }
}

pub struct PrefixDisplay {
    prefix: Prefix,
    family: Family,
}

impl fmt::Display for PrefixDisplay {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let p = self.prefix;
        let wire = shl(p.index, self.family.wire_bits() - p.len);
        match self.family {
            Family::V4 => write!(f, "{}/{}", std::net::Ipv4Addr::from(wire as u32), p.len),
            Family::V6 => write!(f, "{}/{}", std::net::Ipv6Addr::from(wire), p.len),
        }
    }
}

/// Exact dyadic rational `num / 2^exp` in `[0, 1]`, kept in lowest terms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Dyadic {
    num: u128,
    exp: u32,
}

impl Dyadic {
    pub const ZERO: Dyadic = Dyadic { num: 0, exp: 0 };
    pub const ONE: Dyadic = Dyadic { num: 1, exp: 0 };

    pub fn new(mut num: u128, mut exp: u32) -> Self {
        if num == 0 {
            return Dyadic::ZERO;
        }
        while exp > 0 && num & 1 == 0 {
            num >>= 1;
            exp -= 1;
        }
        Dyadic { num, exp }
    }

    pub fn numerator(&self) -> u128 {
        self.num
    }

    pub fn exponent(&self) -> u32 {
        self.exp
    }

    pub fn to_f64(&self) -> f64 {
        self.num as f64 * (-(self.exp as f64)).exp2()
    }
}

impl Ord for Dyadic {
    fn cmp(&self, other: &Self) -> Ordering {
        let e = self.exp.max(other.exp);
        // Values strictly below one scale into u128 without overflow.
        let scale = |d: &Dyadic| -> Option<u128> {
            if *d == Dyadic::ONE {
                None
            } else {
                Some(d.num << (e - d.exp))
            }
        };
        match (scale(self), scale(other)) {
            (None, None) => Ordering::Equal,
            (None, Some(_)) => Ordering::Greater,
            (Some(_), None) => Ordering::Less,
            (Some(a), Some(b)) => a.cmp(&b),
        }
    }
}

impl PartialOrd for Dyadic {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl fmt::Display for Dyadic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.exp == 0 {
            write!(f, "{}", self.num)
        } else {
            write!(f, "{}/2^{}", self.num, self.exp)
        }
    }
}

/// Half-open interval `[lo, hi)` of the unit interval.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DyadicInterval {
    pub lo: Dyadic,
    pub hi: Dyadic,
}

impl DyadicInterval {
    pub fn entirely_left_of(&self, other: &DyadicInterval) -> bool {
        self.hi <= other.lo
    }
}

/// Minimal list of aligned prefixes whose union is exactly `[lo, hi]`,
/// in ascending order.
pub fn range_to_prefixes(lo: u128, hi: u128, universe: AddressUniverse) -> Result<Vec<Prefix>> {
    if lo > hi {
        return Err(Error::InvertedRange);
    }
    if !universe.contains(hi) {
        return Err(Error::InvalidUniverse(format!(
            "range end {hi:#x} lies outside a {}-bit universe",
            universe.bits()
        )));
    }
    let bits = universe.bits();
    let mut out = Vec::new();
    let mut cur = lo;
    loop {
        let mut host = cur.trailing_zeros().min(bits);
        while host > 0 && cur + low_mask(host) > hi {
            host -= 1;
        }
        let last = cur + low_mask(host);
        out.push(Prefix::of_value(cur, bits - host, universe));
        if last >= hi {
            break;
        }
        cur = last + 1;
    }
    Ok(out)
}
