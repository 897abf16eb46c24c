//! Run configuration: a `key = value` file overlaid by command-line flags.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::ops::RangeInclusive;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use clap::Args;
use ipcascade::address::{AddressUniverse, CapacityMap, Family};
use ipcascade::fit::default_fit_range;
use ipcascade::moments::{default_levels, default_q_grid, q_grid, VarianceKind};

pub const KEYS: [&str; 13] = [
    "universe",
    "bits",
    "levels",
    "fit_levels",
    "qgrid",
    "sigma",
    "n",
    "seed",
    "reserved",
    "lag",
    "slots",
    "variance",
    "out",
];

/// Flags shared by every subcommand.
#[derive(Debug, Default, Args)]
pub struct Overrides {
    /// Config file of `key = value` lines; flags take precedence.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Address family: v4 or v6.
    #[arg(long, global = true)]
    pub universe: Option<String>,
    /// Effective bits kept from each address (v6 default 64).
    #[arg(long, global = true)]
    pub bits: Option<String>,
    /// Parent prefix lengths for the estimator, as LO:HI.
    #[arg(long, global = true)]
    pub levels: Option<String>,
    /// Child prefix lengths used to fit the generator, as LO:HI.
    #[arg(long, global = true)]
    pub fit_levels: Option<String>,
    /// Moment grid, as LO:HI:STEP.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub qgrid: Option<String>,
    /// Logit-normal generator parameter.
    #[arg(long, global = true)]
    pub sigma: Option<String>,
    /// Number of addresses to generate.
    #[arg(long, global = true)]
    pub n: Option<String>,
    #[arg(long, global = true)]
    pub seed: Option<String>,
    /// Reserved-range file, one CIDR prefix per line.
    #[arg(long, global = true, value_name = "FILE")]
    pub reserved: Option<String>,
    /// Detector lag k.
    #[arg(long, global = true)]
    pub lag: Option<String>,
    /// Detector slot count N.
    #[arg(long, global = true)]
    pub slots: Option<String>,
    /// Estimator variance: within-level or between-level.
    #[arg(long, global = true)]
    pub variance: Option<String>,
    /// Output directory.
    #[arg(long, global = true, value_name = "DIR")]
    pub out: Option<String>,
}

impl Overrides {
    fn pairs(&self) -> [(&'static str, &Option<String>); 13] {
        [
            ("universe", &self.universe),
            ("bits", &self.bits),
            ("levels", &self.levels),
            ("fit_levels", &self.fit_levels),
            ("qgrid", &self.qgrid),
            ("sigma", &self.sigma),
            ("n", &self.n),
            ("seed", &self.seed),
            ("reserved", &self.reserved),
            ("lag", &self.lag),
            ("slots", &self.slots),
            ("variance", &self.variance),
            ("out", &self.out),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub universe: AddressUniverse,
    pub levels: RangeInclusive<u32>,
    pub fit_levels: RangeInclusive<u32>,
    pub qgrid: (f64, f64, f64),
    /// Whether the grid was set explicitly rather than defaulted.
    pub qgrid_explicit: bool,
    pub sigma: Option<f64>,
    pub n: u64,
    pub seed: u64,
    pub reserved: Option<PathBuf>,
    pub lag: usize,
    pub slots: Option<usize>,
    pub variance: VarianceKind,
    pub out: PathBuf,
}

pub fn parse_config_text(text: &str) -> Result<BTreeMap<String, String>> {
    let mut map = BTreeMap::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| anyhow!("config line {}: expected key = value", i + 1))?;
        let key = k.trim().replace('-', "_");
        if !KEYS.contains(&key.as_str()) {
            bail!("config line {}: unknown key {:?}", i + 1, k.trim());
        }
        map.insert(key, v.trim().to_string());
    }
    Ok(map)
}

fn range(text: &str, key: &str) -> Result<RangeInclusive<u32>> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| anyhow!("{key}: expected LO:HI, got {text:?}"))?;
    let lo: u32 = a.trim().parse().with_context(|| format!("{key}: bad LO"))?;
    let hi: u32 = b.trim().parse().with_context(|| format!("{key}: bad HI"))?;
    if lo > hi {
        bail!("{key}: LO exceeds HI");
    }
    Ok(lo..=hi)
}

fn number<T: std::str::FromStr>(text: &str, key: &str) -> Result<T>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    text.trim()
        .parse()
        .with_context(|| format!("{key}: cannot parse {text:?}"))
}

impl RunConfig {
    pub fn resolve(flags: &Overrides) -> Result<RunConfig> {
        let mut map = match &flags.config {
            Some(path) => {
                let text =
                    fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
                parse_config_text(&text)?
            }
            None => BTreeMap::new(),
        };
        for (k, v) in flags.pairs() {
            if let Some(v) = v {
                map.insert(k.to_string(), v.clone());
            }
        }
        Self::from_map(&map)
    }

    pub fn from_map(map: &BTreeMap<String, String>) -> Result<RunConfig> {
        let get = |k: &str| map.get(k).map(String::as_str);
        let family = match get("universe").unwrap_or("v4") {
            "v4" | "ipv4" => Family::V4,
            "v6" | "ipv6" => Family::V6,
            other => bail!("universe: expected v4 or v6, got {other:?}"),
        };
        let bits = match get("bits") {
            Some(b) => number(b, "bits")?,
            None => family.wire_bits().min(64),
        };
        let universe = AddressUniverse::new(family, bits)?;
        let levels = match get("levels") {
            Some(t) => range(t, "levels")?,
            None => default_levels(universe),
        };
        let fit_levels = match get("fit_levels") {
            Some(t) => range(t, "fit_levels")?,
            None => default_fit_range(universe),
        };
        let (qgrid, qgrid_explicit) = match get("qgrid") {
            Some(t) => {
                let parts: Vec<&str> = t.split(':').collect();
                if parts.len() != 3 {
                    bail!("qgrid: expected LO:HI:STEP, got {t:?}");
                }
                let g = (
                    number(parts[0], "qgrid")?,
                    number(parts[1], "qgrid")?,
                    number(parts[2], "qgrid")?,
                );
                q_grid(g.0, g.1, g.2)?;
                (g, true)
            }
            None => {
                let d = default_q_grid();
                ((d[0], d[d.len() - 1], d[1] - d[0]), false)
            }
        };
        let sigma = get("sigma").map(|s| number::<f64>(s, "sigma")).transpose()?;
        if sigma.is_some_and(|s| !(s >= 0.0 && s.is_finite())) {
            bail!("sigma must be a finite non-negative number");
        }
        Ok(RunConfig {
            universe,
            levels,
            fit_levels,
            qgrid,
            qgrid_explicit,
            sigma,
            n: get("n").map(|s| number(s, "n")).transpose()?.unwrap_or(500_000),
            seed: get("seed").map(|s| number(s, "seed")).transpose()?.unwrap_or(0),
            reserved: get("reserved").map(PathBuf::from),
            lag: get("lag").map(|s| number(s, "lag")).transpose()?.unwrap_or(10),
            slots: get("slots").map(|s| number(s, "slots")).transpose()?,
            variance: get("variance")
                .map(|s| s.parse::<VarianceKind>())
                .transpose()?
                .unwrap_or_default(),
            out: PathBuf::from(get("out").unwrap_or(".")),
        })
    }

    pub fn qs(&self) -> Result<Vec<f64>> {
        let (lo, hi, step) = self.qgrid;
        Ok(q_grid(lo, hi, step)?)
    }

    pub fn capacity(&self) -> Result<CapacityMap> {
        match &self.reserved {
            Some(path) => {
                let file = fs::File::open(path)
                    .with_context(|| format!("reading reserved ranges {}", path.display()))?;
                Ok(CapacityMap::parse_reserved(
                    std::io::BufReader::new(file),
                    self.universe,
                )?)
            }
            None => Ok(CapacityMap::default_for(self.universe)),
        }
    }

    /// The resolved configuration in the same `key = value` form it is read
    /// from, so an output directory can be replayed.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let family = match self.universe.family() {
            Family::V4 => "v4",
            Family::V6 => "v6",
        };
        let _ = writeln!(out, "universe = {family}");
        let _ = writeln!(out, "bits = {}", self.universe.bits());
        let _ = writeln!(out, "levels = {}:{}", self.levels.start(), self.levels.end());
        let _ = writeln!(
            out,
            "fit_levels = {}:{}",
            self.fit_levels.start(),
            self.fit_levels.end()
        );
        let (lo, hi, step) = self.qgrid;
        if self.qgrid_explicit {
            let _ = writeln!(out, "qgrid = {lo}:{hi}:{step}");
        } else {
            let _ = writeln!(out, "# qgrid default: {lo}:{hi}:{step}");
        }
        if let Some(s) = self.sigma {
            let _ = writeln!(out, "sigma = {s}");
        }
        let _ = writeln!(out, "n = {}", self.n);
        let _ = writeln!(out, "seed = {}", self.seed);
        if let Some(r) = &self.reserved {
            let _ = writeln!(out, "reserved = {}", r.display());
        }
        let _ = writeln!(out, "lag = {}", self.lag);
        if let Some(s) = self.slots {
            let _ = writeln!(out, "slots = {s}");
        }
        let variance = match self.variance {
            VarianceKind::WithinLevel => "within-level",
            VarianceKind::BetweenLevel => "between-level",
        };
        let _ = writeln!(out, "variance = {variance}");
        let _ = writeln!(out, "out = {}", self.out.display());
        out
    }

    /// Create the output directory and write `config.txt` into it, with any
    /// derived settings appended as comments.
    pub fn echo(&self, derived: &[(&str, String)]) -> Result<()> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        let mut text = self.to_text();
        for (k, v) in derived {
            let _ = writeln!(text, "# {k}: {v}");
        }
        write(&self.out.join("config.txt"), &text)
    }
}

pub fn write(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flags_override_file_values() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.conf");
        fs::write(&path, "# sample\nseed = 7\nlag=3\nqgrid = -1:2:0.5\n").unwrap();
        let flags = Overrides {
            config: Some(path),
            seed: Some("9".into()),
            ..Default::default()
        };
        let cfg = RunConfig::resolve(&flags).unwrap();
        assert_eq!((cfg.seed, cfg.lag), (9, 3));
        assert_eq!(cfg.qs().unwrap(), vec![-1.0, -0.5, 0.0, 0.5, 1.0, 1.5, 2.0]);
        assert!(cfg.qgrid_explicit);
    }

    #[test]
    fn defaults_follow_the_universe() {
        let cfg = RunConfig::from_map(&BTreeMap::new()).unwrap();
        assert_eq!(cfg.levels, 8..=16);
        assert_eq!(cfg.universe.bits(), 32);
        assert!(!cfg.qgrid_explicit);
        assert_eq!(cfg.qs().unwrap().len(), 25);
        let v6 = RunConfig::from_map(&[("universe".to_string(), "v6".to_string())].into()).unwrap();
        assert_eq!(v6.universe.bits(), 64);
    }

    #[test]
    fn echoed_text_round_trips() {
        let mut map = BTreeMap::new();
        map.insert("sigma".to_string(), "1.61".to_string());
        map.insert("levels".to_string(), "6:12".to_string());
        map.insert("variance".to_string(), "between".to_string());
        let cfg = RunConfig::from_map(&map).unwrap();
        let again = RunConfig::from_map(&parse_config_text(&cfg.to_text()).unwrap()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn rejects_unknown_keys_and_bad_ranges() {
        assert!(parse_config_text("colour = red\n").is_err());
        assert!(parse_config_text("no equals sign\n").is_err());
        let bad = [("levels".to_string(), "9:3".to_string())].into();
        assert!(RunConfig::from_map(&bad).is_err());
    }
}
