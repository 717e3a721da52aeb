//! Experiment entry points behind the CLI: multi-seed runs with CSV metrics,
//! a run manifest, partition inspection, and MAC counting.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use crate::config::RunConfig;
use crate::data::{alpha_weights, class_counts, Dataset, Shard};
use crate::engine::{build_shards, run_experiment};
use crate::error::{Error, Result};
use crate::metrics::{rounds_to_target, RoundRecord};
use crate::nn::count_macs;
use crate::registry;

pub const ARTIFACT_VERSION: &str = env!("CARGO_PKG_VERSION");

pub const CSV_HEADER: &str = "round,global_acc,mean_per_class_acc,ci_low,ci_high,kl,elapsed_s";

/// Formats with 6 significant digits, printf `%g` style.
pub fn fmt_g6(x: f64) -> String {
    if x == 0.0 {
        return "0".to_string();
    }
    if !x.is_finite() {
        return x.to_string();
    }
    let exp = x.abs().log10().floor() as i32;
    if !(-4..6).contains(&exp) {
        format!("{x:.5e}")
    } else {
        let decimals = (5 - exp).max(0) as usize;
        format!("{x:.decimals$}")
    }
}

/// Serializes records to the metrics CSV schema.
pub fn records_to_csv(records: &[RoundRecord]) -> String {
    let mut out = String::with_capacity(64 * (records.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in records {
        let kl = r.kl_local_vs_ensemble.map(fmt_g6).unwrap_or_default();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.round,
            fmt_g6(r.global_accuracy),
            fmt_g6(r.mean_per_class_acc),
            fmt_g6(r.per_class_acc_ci95.0),
            fmt_g6(r.per_class_acc_ci95.1),
            kl,
            fmt_g6(r.elapsed_seconds),
        );
    }
    out
}

/// Parses a metrics CSV back into records.
pub fn parse_records(path: &Path) -> Result<Vec<RoundRecord>> {
    let text = std::fs::read_to_string(path)?;
    let label = path.display().to_string();
    let fail = |line: usize, message: String| Error::Csv {
        path: label.clone(),
        line,
        message,
    };
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header == CSV_HEADER => {}
        other => {
            return Err(fail(
                1,
                format!("expected header `{CSV_HEADER}`, got {other:?}"),
            ))
        }
    }
    let mut records = Vec::new();
    for (idx, line) in lines {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(fail(idx + 1, format!("expected 7 fields, got {}", fields.len())));
        }
        let num = |i: usize| -> Result<f64> {
            fields[i]
                .parse()
                .map_err(|_| fail(idx + 1, format!("bad number `{}`", fields[i])))
        };
        records.push(RoundRecord {
            round: fields[0]
                .parse()
                .map_err(|_| fail(idx + 1, format!("bad round `{}`", fields[0])))?,
            global_accuracy: num(1)?,
            mean_per_class_acc: num(2)?,
            per_class_acc_ci95: (num(3)?, num(4)?),
            kl_local_vs_ensemble: if fields[5].is_empty() {
                None
            } else {
                Some(num(5)?)
            },
            elapsed_seconds: num(6)?,
        });
    }
    Ok(records)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Running,
    Complete,
    /// Some seed failed; its CSV may be missing or truncated.
    Partial { failed_seed: u64 },
}

/// Run metadata written to `manifest.txt` before the first round executes
/// and finalized when the run ends. The `[config]` block is the byte-exact
/// serialized config, re-runnable as a config file.
#[derive(Debug, Clone)]
pub struct RunManifest {
    pub version: String,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub started_at_unix: u64,
    pub finished_at_unix: Option<u64>,
    pub status: RunStatus,
    pub config_text: String,
}

impl RunManifest {
    fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "# fedbalance run manifest");
        let _ = writeln!(s, "version = {}", self.version);
        let _ = writeln!(
            s,
            "status = {}",
            match self.status {
                RunStatus::Running => "running".to_string(),
                RunStatus::Complete => "complete".to_string(),
                RunStatus::Partial { failed_seed } => format!("partial (seed {failed_seed} failed)"),
            }
        );
        let _ = writeln!(
            s,
            "seeds = {}",
            self.seeds
                .iter()
                .map(|s| s.to_string())
                .collect::<Vec<_>>()
                .join(",")
        );
        let _ = writeln!(s, "output_dir = {}", self.output_dir.display());
        let _ = writeln!(s, "started_at_unix = {}", self.started_at_unix);
        if let Some(t) = self.finished_at_unix {
            let _ = writeln!(s, "finished_at_unix = {t}");
        }
        let _ = writeln!(s, "\n[config]");
        s.push_str(&self.config_text);
        s
    }

    fn write(&self, dir: &Path) -> Result<()> {
        std::fs::write(dir.join("manifest.txt"), self.render())?;
        Ok(())
    }
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

/// What `run` produced, for callers that want the numbers as well as files.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub csv_paths: Vec<PathBuf>,
    pub final_accuracies: Vec<f64>,
    pub mean_final_accuracy: f64,
    pub std_final_accuracy: f64,
}

fn mean_and_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() < 2 {
        0.0
    } else {
        (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
    };
    (mean, std)
}

/// Runs the experiment once per seed (`config.seed`, `config.seed + 1`, ...),
/// writing one metrics CSV per seed, a summary with the cross-seed mean and
/// standard deviation of final accuracy, and a manifest. Deterministic per
/// seed in every column except wall time.
pub fn run(config: &RunConfig, seed_count: usize, out_dir: &Path) -> Result<RunSummary> {
    if seed_count == 0 {
        return Err(Error::InvalidArgument("need at least one seed".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let seeds: Vec<u64> = (0..seed_count as u64).map(|i| config.seed + i).collect();
    let mut manifest = RunManifest {
        version: ARTIFACT_VERSION.to_string(),
        seeds: seeds.clone(),
        output_dir: out_dir.to_path_buf(),
        started_at_unix: unix_now(),
        finished_at_unix: None,
        status: RunStatus::Running,
        config_text: config.to_config_string(),
    };
    manifest.write(out_dir)?;

    let (train, test) = config.data.load()?;
    let mut csv_paths = Vec::with_capacity(seeds.len());
    let mut final_accuracies = Vec::with_capacity(seeds.len());
    let mut per_seed_lines = Vec::with_capacity(seeds.len());

    for &seed in &seeds {
        let mut experiment = config.resolve(train.shape(), train.num_classes())?;
        experiment.seed = seed;
        let outcome = run_experiment(&experiment, &train, &test).inspect_err(|_| {
            manifest.status = RunStatus::Partial { failed_seed: seed };
            manifest.finished_at_unix = Some(unix_now());
            let _ = manifest.write(out_dir);
        })?;
        let path = out_dir.join(format!("{}_seed{}.csv", config.method.name(), seed));
        std::fs::write(&path, records_to_csv(&outcome.records))?;

        let final_acc = outcome
            .records
            .last()
            .map(|r| r.global_accuracy)
            .unwrap_or(0.0);
        let mut line = format!("seed {seed}: final_accuracy {}", fmt_g6(final_acc));
        if let Some(target) = experiment.target_accuracy {
            let reached = rounds_to_target(&outcome.records, target)
                .map(|r| r.to_string())
                .unwrap_or_else(|| "never".to_string());
            let _ = write!(line, ", rounds_to_target({}) {reached}", fmt_g6(target));
        }
        per_seed_lines.push(line);
        final_accuracies.push(final_acc);
        csv_paths.push(path);
    }

    let (mean, std) = mean_and_std(&final_accuracies);
    let mut summary = String::new();
    let _ = writeln!(summary, "# fedbalance summary");
    let _ = writeln!(summary, "method = {}", config.method.name());
    for line in &per_seed_lines {
        let _ = writeln!(summary, "{line}");
    }
    let _ = writeln!(summary, "final_accuracy_mean = {}", fmt_g6(mean));
    let _ = writeln!(summary, "final_accuracy_std = {}", fmt_g6(std));
    std::fs::write(out_dir.join("summary.txt"), summary)?;

    manifest.status = RunStatus::Complete;
    manifest.finished_at_unix = Some(unix_now());
    manifest.write(out_dir)?;

    Ok(RunSummary {
        csv_paths,
        final_accuracies,
        mean_final_accuracy: mean,
        std_final_accuracy: std,
    })
}

/// Renders the per-client class-count table (plus fusion weights and a
/// totals row) for the config's partition.
pub fn inspect_partition(config: &RunConfig) -> Result<String> {
    let (train, _) = config.data.load()?;
    let experiment = config.resolve(train.shape(), train.num_classes())?;
    let shards = build_shards(&experiment, &train)?;
    Ok(render_partition_table(&shards, &train))
}

fn render_partition_table(shards: &[Shard], dataset: &Dataset) -> String {
    let classes = dataset.num_classes();
    let mut s = String::new();
    let _ = write!(s, "{:>7} |", "client");
    for c in 0..classes {
        let _ = write!(s, "{c:>7}");
    }
    let _ = writeln!(s, " | {:>7} | alpha", "total");

    let mut totals = vec![0usize; classes];
    for shard in shards {
        let counts = class_counts(shard, dataset);
        let alpha = alpha_weights(&counts).expect("partition repair leaves no empty shard");
        let _ = write!(s, "{:>7} |", shard.owner);
        for (c, &n) in counts.counts().iter().enumerate() {
            totals[c] += n;
            let _ = write!(s, "{n:>7}");
        }
        let _ = write!(s, " | {:>7} |", counts.total());
        for a in alpha.values() {
            let _ = write!(s, " {a:.3}");
        }
        let _ = writeln!(s);
    }
    let _ = write!(s, "{:>7} |", "total");
    let mut grand = 0usize;
    for &t in &totals {
        grand += t;
        let _ = write!(s, "{t:>7}");
    }
    let _ = writeln!(s, " | {grand:>7} |");
    s
}

/// Renders single-sample MAC counts for the named registry architectures at
/// the default input shape; with several names, also the ensemble total and
/// its relative overhead over the first.
pub fn macs_table(names: &[String]) -> Result<String> {
    if names.is_empty() {
        return Err(Error::InvalidArgument(format!(
            "no architectures given; registry has: {}",
            registry::ARCH_NAMES.join(", ")
        )));
    }
    let mut counts = Vec::with_capacity(names.len());
    for name in names {
        let arch = registry::build(name, registry::DEFAULT_INPUT, registry::DEFAULT_CLASSES)?;
        counts.push(count_macs(&arch));
    }
    let mut s = String::new();
    let _ = writeln!(s, "{:<12} {:>12}", "arch", "macs");
    for (name, macs) in names.iter().zip(&counts) {
        let _ = writeln!(s, "{name:<12} {macs:>12}");
    }
    if names.len() > 1 {
        let total: u64 = counts.iter().sum();
        let overhead = 100.0 * (total - counts[0]) as f64 / counts[0] as f64;
        let _ = writeln!(s, "{:<12} {total:>12}", "ensemble");
        let _ = writeln!(s, "overhead over {}: {overhead:.2}%", names[0]);
    }
    Ok(s)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(round: usize, acc: f64, kl: Option<f64>) -> RoundRecord {
        RoundRecord {
            round,
            global_accuracy: acc,
            mean_per_class_acc: acc / 2.0,
            per_class_acc_ci95: (acc / 2.0 - 0.01, acc / 2.0 + 0.01),
            kl_local_vs_ensemble: kl,
            elapsed_seconds: 1.25,
        }
    }

    #[test]
    fn g6_formatting() {
        assert_eq!(fmt_g6(0.0), "0");
        assert_eq!(fmt_g6(0.8512345678), "0.851235");
        assert_eq!(fmt_g6(123.456789), "123.457");
        assert_eq!(fmt_g6(1e-5), "1.00000e-5");
        assert_eq!(fmt_g6(-0.25), "-0.250000");
    }

    #[test]
    fn csv_round_trip_is_stable() {
        let records = vec![
            record(1, 0.12345678, Some(0.00123456789)),
            record(2, 0.5, None),
        ];
        let csv = records_to_csv(&records);
        let dir = std::env::temp_dir().join(format!("fedbalance-csv-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("metrics.csv");
        std::fs::write(&path, &csv).unwrap();

        let parsed = parse_records(&path).unwrap();
        assert_eq!(parsed.len(), 2);
        assert_eq!(parsed[0].round, 1);
        assert_eq!(parsed[1].kl_local_vs_ensemble, None);
        assert!((parsed[0].global_accuracy - 0.12345678).abs() < 1e-6);

        // Serializing what we parsed reproduces the same bytes.
        assert_eq!(records_to_csv(&parsed), csv);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn parse_rejects_wrong_header() {
        let dir = std::env::temp_dir().join(format!("fedbalance-csvh-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("metrics.csv");
        std::fs::write(&path, "round,acc\n1,0.5\n").unwrap();
        assert!(parse_records(&path).is_err());
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn macs_table_lists_registry_values_and_overhead() {
        let table = macs_table(&["cnn-small".into(), "mlp-weak".into()]).unwrap();
        assert!(table.contains("cnn-small"));
        assert!(table.contains("25408"), "{table}");
        assert!(table.contains("ensemble"), "{table}");
        assert!(macs_table(&["nope".into()]).is_err());
    }
}
