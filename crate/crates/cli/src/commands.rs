use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use anyhow::{anyhow, bail, Context, Result};
use ipcascade::address::{
    build_mass_tree, parse_address_list, parse_addresses, zoom_csv, zoom_path, AddressSet, Family,
};
use ipcascade::alloc::{
    added_levels, approx_max_aggregates, build_inclusion_tree, ccdf_csv, max_aggregation_runs, parse_records,
    percent_covered, width_depth_stats,
};
use ipcascade::anomaly::{
    lag_sweep, population_sweep, stream_csv_header, stream_csv_row, Detector, DetectorConfig, SyntheticTrial,
};
use ipcascade::cascade::{critical_q_range, generate, CascadeSpec, Generator};
use ipcascade::fit::{compute_weights, fit_sigma, preprocess, weight_histogram, weights_csv};
use ipcascade::moments::{generalized_dimensions, linearity_test, partition_function, tau_tilde_avg};
use ipcascade::Error;
use serde_json::json;

use crate::config::{write, RunConfig};

fn read_addresses(path: &Path, cfg: &RunConfig) -> Result<AddressSet> {
    let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    let set = parse_addresses(BufReader::new(file), cfg.universe)
        .with_context(|| format!("reading {}", path.display()))?;
    if set.is_empty() {
        return Err(Error::EmptySet).with_context(|| format!("{} holds no addresses", path.display()));
    }
    Ok(set)
}

fn pretty(value: &serde_json::Value) -> String {
    let mut s = serde_json::to_string_pretty(value).expect("json values serialize");
    s.push('\n');
    s
}

fn parse_window(text: &str) -> Result<(f64, f64)> {
    let (a, b) = text
        .split_once(':')
        .ok_or_else(|| anyhow!("window: expected LO:HI, got {text:?}"))?;
    Ok((a.trim().parse()?, b.trim().parse()?))
}

pub fn fit(cfg: &RunConfig, input: &Path, bins: usize) -> Result<()> {
    let set = read_addresses(input, cfg)?;
    let (lo, hi) = (*cfg.fit_levels.start(), *cfg.fit_levels.end());
    if lo == 0 {
        bail!("fit_levels are child levels and must start at 1 or above");
    }
    let tree = build_mass_tree(&set, lo - 1, hi)?;
    let weights = compute_weights(&tree, cfg.fit_levels.clone())?;
    let cleaned = preprocess(&weights, cfg.fit_levels.clone())?;
    let result = fit_sigma(&cleaned)?;
    cfg.echo(&[])?;
    write(&cfg.out.join("weights.csv"), &weights_csv(&weights))?;
    write(&cfg.out.join("fit.json"), &pretty(&serde_json::to_value(result)?))?;
    if bins > 0 {
        let hist = weight_histogram(&weights, bins, &[], true)?;
        write(&cfg.out.join("histogram.csv"), &hist.to_csv())?;
    }
    println!(
        "sigma = {:.4} from {} weights at child levels {}..={}",
        result.sigma, result.samples, result.level_min, result.level_max
    );
    Ok(())
}

pub fn generate_cmd(cfg: &RunConfig) -> Result<()> {
    let sigma = cfg.sigma.ok_or_else(|| anyhow!("generate needs --sigma"))?;
    let spec = CascadeSpec {
        generator: Generator::logit_normal(sigma)?,
        total_mass: cfg.n,
        universe: cfg.universe,
        capacity: cfg.capacity()?,
        seed: cfg.seed,
    };
    let (set, log) = generate(&spec)?;
    cfg.echo(&[])?;
    write(&cfg.out.join("addresses.txt"), &set.to_text())?;
    write(&cfg.out.join("spillover.csv"), &log.to_csv())?;
    match log.first_spill_level() {
        Some(l) => println!("{} addresses, first spillover at level {l}", set.len()),
        None => println!("{} addresses, no spillover", set.len()),
    }
    Ok(())
}

pub fn analyze(cfg: &RunConfig, input: &Path, window: &str, threshold: f64) -> Result<()> {
    let set = read_addresses(input, cfg)?;
    let qs = cfg.qs()?;
    let (lo, hi) = (*cfg.levels.start(), *cfg.levels.end());
    let tree = build_mass_tree(&set, lo, hi + 1)?;
    let partition = partition_function(&tree, &qs, lo..=hi + 1)?;
    let mut est = tau_tilde_avg(&tree, &qs, cfg.levels.clone(), cfg.variance)?;
    if let Some(s) = cfg.sigma {
        est.critical = Some(critical_q_range(&Generator::logit_normal(s)?)?);
    }
    let dims = generalized_dimensions(&est)?;
    let linearity = linearity_test(&est, parse_window(window)?, threshold)?;

    let mut report = serde_json::to_value(dims)?;
    report["linearity"] = serde_json::to_value(linearity)?;
    report["levels"] = json!(est.levels);
    report["variance"] = serde_json::to_value(est.variance_kind)?;
    if let Some(c) = &est.critical {
        report["critical"] = serde_json::to_value(c)?;
    }
    cfg.echo(&[("linearity_window", window.to_string())])?;
    write(&cfg.out.join("partition.csv"), &partition.to_csv())?;
    write(&cfg.out.join("structure.csv"), &est.to_csv())?;
    write(&cfg.out.join("dimensions.json"), &pretty(&report))?;
    println!(
        "D0 = {:.3}  D1 = {:.3}  D2 = {:.3}  tau(1) zero: {}  linear: {}",
        dims.d0.value, dims.d1.value, dims.d2.value, dims.tau1_is_zero, linearity.is_linear
    );
    Ok(())
}

/// Detector grid: the explicit `qgrid` if one was set, otherwise the
/// gaussianity range of the configured or fitted generator.
fn detector_qs(cfg: &RunConfig, fit_from: Option<&AddressSet>) -> Result<(Vec<f64>, String)> {
    if cfg.qgrid_explicit {
        return Ok((cfg.qs()?, String::from("explicit qgrid")));
    }
    let (sigma, source) = match (cfg.sigma, fit_from) {
        (Some(s), _) => (s, String::from("configured sigma")),
        (None, Some(set)) => {
            let (lo, hi) = (*cfg.fit_levels.start(), *cfg.fit_levels.end());
            let tree = build_mass_tree(set, lo.saturating_sub(1), hi)?;
            let weights = compute_weights(&tree, cfg.fit_levels.clone())?;
            let s = fit_sigma(&preprocess(&weights, cfg.fit_levels.clone())?)?.sigma;
            (s, format!("sigma {s:.4} fitted from the baseline"))
        }
        (None, None) => bail!("the detector grid needs --qgrid, --sigma, or a baseline to fit"),
    };
    let range = critical_q_range(&Generator::logit_normal(sigma)?)?;
    Ok((DetectorConfig::q_grid_for(&range), source))
}

fn format_qs(qs: &[f64]) -> String {
    qs.iter().map(f64::to_string).collect::<Vec<_>>().join(",")
}

pub fn anomaly_stream(cfg: &RunConfig, baseline: Option<&Path>) -> Result<()> {
    let order = match baseline {
        Some(path) => {
            let file = File::open(path).with_context(|| format!("opening {}", path.display()))?;
            parse_address_list(BufReader::new(file), cfg.universe)
                .with_context(|| format!("reading {}", path.display()))?
        }
        None => Vec::new(),
    };
    let base = match baseline {
        Some(path) if order.is_empty() => {
            return Err(Error::EmptySet).with_context(|| format!("{} holds no addresses", path.display()))
        }
        Some(_) => Some(AddressSet::new(cfg.universe, order.clone())?),
        None => None,
    };
    let (qs, source) = detector_qs(cfg, base.as_ref())?;
    let slots = cfg
        .slots
        .or(base.as_ref().map(AddressSet::len))
        .ok_or_else(|| anyhow!("streaming needs --slots or a baseline file"))?;
    let mut detector = Detector::new(DetectorConfig {
        universe: cfg.universe,
        slots,
        qs: qs.clone(),
        levels: cfg.levels.clone(),
        lag: cfg.lag,
        seed: cfg.seed,
        variance: cfg.variance,
    })?;
    // File order, so slot collisions resolve as they would have live.
    for &v in &order {
        detector.observe(v)?;
    }
    cfg.echo(&[("qs", format_qs(&qs)), ("qs_source", source)])?;

    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());
    out.write_all(stream_csv_header().as_bytes())?;
    let mut index = 0;
    for (i, line) in io::stdin().lock().lines().enumerate() {
        let line = line?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let value = match cfg.universe.parse_value(text) {
            Some(Ok(v)) => v,
            Some(Err(expected)) => {
                return Err(Error::FamilyMismatch {
                    line: i + 1,
                    expected,
                }
                .into());
            }
            None => {
                return Err(Error::Parse {
                    line: i + 1,
                    text: text.to_string(),
                }
                .into())
            }
        };
        let score = detector.observe(value)?;
        out.write_all(stream_csv_row(index, &cfg.universe.format(value), &score).as_bytes())?;
        index += 1;
    }
    out.flush()?;
    Ok(())
}

pub fn anomaly_experiment(
    cfg: &RunConfig,
    population: Option<&Path>,
    ks: &[usize],
    trials: u64,
) -> Result<()> {
    if cfg.universe.family() != Family::V4 {
        bail!("the anomaly experiment injects /8-preserving addresses and needs the v4 universe");
    }
    let seeds: Vec<u64> = (cfg.seed..cfg.seed + trials).collect();
    let slots = cfg.slots.unwrap_or(50_000);
    let (summaries, qs, source) = match population {
        Some(path) => {
            let set = read_addresses(path, cfg)?;
            let (qs, source) = detector_qs(cfg, Some(&set))?;
            let config = DetectorConfig {
                universe: cfg.universe,
                slots,
                qs: qs.clone(),
                levels: cfg.levels.clone(),
                lag: 1,
                seed: cfg.seed,
                variance: cfg.variance,
            };
            (population_sweep(&set, &config, ks, &seeds)?, qs, source)
        }
        None => {
            let sigma = cfg.sigma.unwrap_or(1.61);
            let cfg_sigma = RunConfig {
                sigma: Some(sigma),
                ..cfg.clone()
            };
            let (qs, source) = detector_qs(&cfg_sigma, None)?;
            let trial = SyntheticTrial {
                sigma,
                population: cfg.n,
                baseline: slots,
                levels: cfg.levels.clone(),
                qs: qs.clone(),
                variance: cfg.variance,
            };
            (lag_sweep(&trial, ks, &seeds)?, qs, source)
        }
    };
    let text = pretty(&serde_json::to_value(&summaries)?);
    cfg.echo(&[
        ("qs", format_qs(&qs)),
        ("qs_source", source),
        ("trials", trials.to_string()),
    ])?;
    write(&cfg.out.join("harness.json"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn alloc(cfg: &RunConfig, input: &Path, threshold: f64, runs: bool) -> Result<()> {
    let file = File::open(input).with_context(|| format!("opening {}", input.display()))?;
    let records = parse_records(BufReader::new(file), cfg.universe)?;
    if records.is_empty() {
        return Err(Error::InsufficientData(format!("{} holds no records", input.display())).into());
    }
    let family = cfg.universe.family();
    let blocks: Vec<_> = records.iter().map(|r| (r.prefix, r.label.clone())).collect();
    let tree = build_inclusion_tree(records, cfg.universe);
    for c in &tree.collisions {
        eprintln!(
            "warning: duplicate record {}: kept {:?}, dropped {:?}",
            c.prefix.display(family),
            c.kept,
            c.dropped
        );
    }
    let stats = width_depth_stats(&tree);

    let mut coverage = String::from("prefix,label,depth,children,percent_covered\n");
    let mut aggregates = String::from("parent_prefix,aggregate_prefix,percent_covered\n");
    let mut added = String::from("leaf_prefix,parent_prefix,added_levels\n");
    for (id, node) in tree.nodes.iter().enumerate() {
        let p = node.record.prefix;
        let _ = writeln!(
            coverage,
            "{},{},{},{},{}",
            p.display(family),
            csv_field(&node.record.label),
            node.depth,
            node.children.len(),
            percent_covered(&tree, &p)
        );
        if tree.is_leaf(id) {
            continue;
        }
        let aggs = approx_max_aggregates(&tree, id, threshold);
        for a in &aggs {
            let _ = writeln!(
                aggregates,
                "{},{},{}",
                p.display(family),
                a.prefix.display(family),
                a.coverage
            );
        }
        for (leaf, n) in added_levels(&tree, id, &aggs) {
            let _ = writeln!(
                added,
                "{},{},{n}",
                tree.nodes[leaf].record.prefix.display(family),
                p.display(family)
            );
        }
    }

    cfg.echo(&[("aggregate_threshold", threshold.to_string())])?;
    write(&cfg.out.join("degree.csv"), &ccdf_csv("degree", &stats.degrees))?;
    write(&cfg.out.join("depth.csv"), &ccdf_csv("depth", &stats.depths))?;
    write(&cfg.out.join("coverage.csv"), &coverage)?;
    write(&cfg.out.join("aggregates.csv"), &aggregates)?;
    write(&cfg.out.join("added_levels.csv"), &added)?;
    if runs {
        let mut text = String::from("label,first_prefix,blocks,aggregate_len\n");
        for r in max_aggregation_runs(&blocks, cfg.universe)? {
            let _ = writeln!(
                text,
                "{},{},{},{}",
                csv_field(&r.label),
                r.first.display(family),
                r.blocks,
                r.aggregate_len
            );
        }
        write(&cfg.out.join("runs.csv"), &text)?;
    }
    println!(
        "{} records, {} roots, max depth {}",
        tree.len(),
        tree.roots.len(),
        stats.depths.iter().max().copied().unwrap_or(0)
    );
    Ok(())
}

fn csv_field(text: &str) -> String {
    if text.contains([',', '"', '\n']) {
        format!("\"{}\"", text.replace('"', "\"\""))
    } else {
        text.to_string()
    }
}

/// Zoom levels `lo, lo + step, ...` up to `hi`.
pub fn zoom(cfg: &RunConfig, input: &Path, target: &str, sub_bits: u32, levels: Option<&str>) -> Result<()> {
    let set = read_addresses(input, cfg)?;
    let bits = cfg.universe.bits();
    let value = match cfg.universe.parse_value(target) {
        Some(Ok(v)) => v,
        _ => bail!("target {target:?} is not an address in the configured universe"),
    };
    let (lo, hi) = match levels {
        Some(text) => {
            let (a, b) = text
                .split_once(':')
                .ok_or_else(|| anyhow!("zoom levels: expected LO:HI"))?;
            (a.trim().parse()?, b.trim().parse()?)
        }
        None => (0, bits.saturating_sub(sub_bits)),
    };
    let step = sub_bits.max(1) as usize;
    let list: Vec<u32> = (lo..=hi).step_by(step).collect();
    let tree = build_mass_tree(&set, 0, bits)?;
    let path = zoom_path(&tree, value, &list, sub_bits)?;
    cfg.echo(&[
        ("zoom_levels", format!("{lo}:{hi}")),
        ("zoom_bits", sub_bits.to_string()),
    ])?;
    write(&cfg.out.join("zoom.csv"), &zoom_csv(&path, cfg.universe.family()))?;
    println!("{} zoom levels around {target}", path.len());
    Ok(())
}
