use std::io::BufRead;

use super::{AddressUniverse, Family, Prefix};
use crate::error::{Error, Result};

/// IPv4 special-purpose ranges that never carry observed traffic.
pub const DEFAULT_V4_RESERVED: &str = "\
# Special-purpose IPv4 ranges, capacity 0.
0.0.0.0/8
10.0.0.0/8
100.64.0.0/10
127.0.0.0/8
169.254.0.0/16
172.16.0.0/12
192.168.0.0/16
224.0.0.0/4
240.0.0.0/4
";

/// Per-prefix address capacity.
///
/// Without overrides a length-`l` prefix holds `2^(bits - l)` addresses.
/// Overrides cap a whole prefix; prefixes inside an override inherit the cap
/// (bounded by their own span) and prefixes containing overrides lose the
/// address count the override removes.
#[derive(Debug, Clone, PartialEq)]
pub struct CapacityMap {
    universe: AddressUniverse,
    overrides: Vec<(Prefix, u128)>,
}

impl CapacityMap {
    pub fn unrestricted(universe: AddressUniverse) -> Self {
        CapacityMap {
            universe,
            overrides: Vec::new(),
        }
    }

    pub fn new(universe: AddressUniverse, mut overrides: Vec<(Prefix, u128)>) -> Result<Self> {
        overrides.sort();
        for (i, (p, cap)) in overrides.iter().enumerate() {
            if p.len() > universe.bits() {
                return Err(Error::InvalidPrefix(format!(
                    "/{} is longer than the {}-bit universe",
                    p.len(),
                    universe.bits()
                )));
            }
            if *cap > universe.span(p.len()) {
                return Err(Error::Config(format!(
                    "override capacity {cap} exceeds the span of /{}",
                    p.len()
                )));
            }
            if overrides[..i].iter().any(|(q, _)| q.contains(p) || p.contains(q)) {
                return Err(Error::Config(String::from("capacity overrides overlap")));
            }
        }
        Ok(CapacityMap { universe, overrides })
    }

    /// The shipped reserved-range map: capacity 0 on special-purpose IPv4
    /// ranges, no restriction for IPv6.
    pub fn default_for(universe: AddressUniverse) -> Self {
        match universe.family() {
            Family::V4 => Self::parse_reserved(DEFAULT_V4_RESERVED.as_bytes(), universe)
                .expect("built-in reserved list is valid"),
            Family::V6 => Self::unrestricted(universe),
        }
    }

    /// One CIDR prefix per line, each given capacity 0. `#` comments allowed.
    pub fn parse_reserved<R: BufRead>(reader: R, universe: AddressUniverse) -> Result<Self> {
        let mut overrides = Vec::new();
        for line in reader.lines() {
            let line = line.map_err(|e| Error::Config(e.to_string()))?;
            let text = line.trim();
            if text.is_empty() || text.starts_with('#') {
                continue;
            }
            overrides.push((Prefix::parse(text, universe)?, 0));
        }
        Self::new(universe, overrides)
    }

    pub fn universe(&self) -> AddressUniverse {
        self.universe
    }

    pub fn overrides(&self) -> &[(Prefix, u128)] {
        &self.overrides
    }

    pub fn default_capacity(&self, len: u32) -> u128 {
        self.universe.span(len)
    }

    /// Whether any override is nested with `prefix` in either direction.
    pub fn touches(&self, prefix: &Prefix) -> bool {
        self.overrides
            .iter()
            .any(|(o, _)| o.contains(prefix) || prefix.contains(o))
    }

    pub fn capacity(&self, prefix: &Prefix) -> u128 {
        let span = self.universe.span(prefix.len());
        let mut removed: u128 = 0;
        for (o, cap) in &self.overrides {
            if o.contains(prefix) {
                return (*cap).min(span);
            }
            if prefix.contains(o) {
                removed += self.universe.span(o.len()) - cap;
            }
        }
        // The full 128-bit span saturates at u128::MAX, one short of 2^128.
        span.saturating_sub(removed)
    }

    pub fn total(&self) -> u128 {
        self.capacity(&Prefix::root())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p(text: &str) -> Prefix {
        Prefix::parse(text, AddressUniverse::v4()).unwrap()
    }

    #[test]
    fn default_capacity_is_span() {
        let m = CapacityMap::unrestricted(AddressUniverse::v4());
        assert_eq!(m.capacity(&p("1.2.3.0/24")), 256);
        assert_eq!(m.capacity(&p("1.2.3.4/32")), 1);
        assert_eq!(m.total(), 1 << 32);
    }

    #[test]
    fn reserved_prefixes_have_zero_capacity() {
        let m = CapacityMap::default_for(AddressUniverse::v4());
        assert_eq!(m.capacity(&p("10.0.0.0/8")), 0);
        assert_eq!(m.capacity(&p("10.1.2.0/24")), 0);
        assert_eq!(m.capacity(&p("224.0.0.0/3")), 0);
        assert_eq!(m.capacity(&p("11.0.0.0/8")), 1 << 24);
        // 0/8, 10/8, 100.64/10 and 127/8 sit inside 0/1.
        let lost = 3 * (1u128 << 24) + (1 << 22);
        assert_eq!(m.capacity(&p("0.0.0.0/1")), (1 << 31) - lost);
    }

    #[test]
    fn reserved_map_is_hierarchy_consistent() {
        let m = CapacityMap::default_for(AddressUniverse::v4());
        let mut frontier = vec![Prefix::root()];
        for _ in 0..16 {
            let mut next = Vec::new();
            for q in frontier {
                let (l, r) = (q.child(false), q.child(true));
                assert_eq!(m.capacity(&q), m.capacity(&l) + m.capacity(&r));
                if m.touches(&l) {
                    next.push(l);
                }
                if m.touches(&r) {
                    next.push(r);
                }
            }
            frontier = next;
        }
    }

    #[test]
    fn overlapping_overrides_rejected() {
        let u = AddressUniverse::v4();
        let err = CapacityMap::new(u, vec![(p("10.0.0.0/8"), 0), (p("10.1.0.0/16"), 0)]);
        assert!(err.is_err());
        let err = CapacityMap::new(u, vec![(p("10.0.0.0/24"), 300)]);
        assert!(err.is_err());
    }

    #[test]
    fn nonzero_override_caps_descendants() {
        let u = AddressUniverse::v4();
        let m = CapacityMap::new(u, vec![(p("10.0.0.0/24"), 100)]).unwrap();
        assert_eq!(m.capacity(&p("10.0.0.0/24")), 100);
        assert_eq!(m.capacity(&p("10.0.0.0/25")), 100);
        assert_eq!(m.capacity(&p("10.0.0.0/30")), 4);
        assert_eq!(m.capacity(&p("10.0.0.0/23")), 512 - 156);
    }
}
