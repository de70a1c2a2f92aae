//! Monte Carlo campaigns over channel realizations, schemes and a sweep
//! variable, plus the CSV and manifest writers.
//!
//! Trial `t` at every sweep point uses fading stream `t`, and every scheme in
//! a trial sees the same channels, so per-trial scheme comparisons are paired.
//! Trials run on the rayon pool; results are collected in trial order, which
//! keeps aggregates and files bit-identical across runs and thread counts.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use log::info;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{generate_channels, Mode, NetworkConfig};
use crate::optimizer::{design_schemes, evaluate_design, Scheme};

/// The variable a campaign sweeps.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "values", rename_all = "lowercase")]
pub enum Sweep {
    /// Common power `P_1 = P_2 = P_r` in dB.
    Power(Vec<f64>),
    /// Source-relay distance; the relay-destination distance shrinks so the
    /// source-destination distance stays fixed.
    Lsr(Vec<f64>),
    /// The configuration as given.
    None,
}

impl Sweep {
    pub fn variable(&self) -> &'static str {
        match self {
            Sweep::Power(_) | Sweep::None => "power_db",
            Sweep::Lsr(_) => "l_sr",
        }
    }

    pub fn values(&self, config: &NetworkConfig) -> Vec<f64> {
        match self {
            Sweep::Power(v) | Sweep::Lsr(v) => v.clone(),
            Sweep::None => vec![10.0 * config.p_r.log10()],
        }
    }

    pub fn validate(&self, config: &NetworkConfig) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        match self {
            Sweep::None => Ok(()),
            Sweep::Power(v) if v.is_empty() => bad("power sweep has no values".into()),
            Sweep::Lsr(v) if v.is_empty() => bad("l_sr sweep has no values".into()),
            Sweep::Power(v) => match v.iter().find(|x| !x.is_finite()) {
                Some(x) => bad(format!("power sweep value {x} is not finite")),
                None => Ok(()),
            },
            Sweep::Lsr(v) => {
                let total = config.l_sd();
                match v.iter().find(|&&x| !(x.is_finite() && x > 0.0 && x < total)) {
                    Some(x) => bad(format!("l_sr value {x} must lie strictly inside (0, {total})")),
                    None => Ok(()),
                }
            }
        }
    }

    /// The configuration at one sweep point.
    pub fn apply(&self, config: &NetworkConfig, value: f64) -> NetworkConfig {
        match self {
            Sweep::Power(_) => config.clone().with_power_db(value),
            Sweep::Lsr(_) => NetworkConfig {
                l_sr: value,
                l_rd: config.l_sd() - value,
                ..config.clone()
            },
            Sweep::None => config.clone(),
        }
    }
}

/// One scheme on one channel realization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub trial_index: u64,
    pub scheme: Scheme,
    pub capacity_bits: f64,
    pub sum_mse: f64,
    pub outer_iters: usize,
    pub converged: bool,
    pub stopped_on_worsening: bool,
    pub non_monotone_sweeps: usize,
    pub inner_maxed_out: usize,
    pub alpha_final: f64,
    pub alpha_min: f64,
    pub alpha_max: f64,
    pub power_residual: f64,
    /// Largest used-to-budget power ratio over the two sources and the relay.
    pub worst_power_ratio: f64,
    /// Objective of the returned design relative to the best seen: the trial's
    /// design objective minus the best objective in its trace (0 when it is
    /// the best); nonzero would mean the best-so-far design was lost.
    pub best_so_far_gap: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Stats {
    pub mean: f64,
    pub stderr: f64,
}

impl Stats {
    pub fn of(samples: &[f64]) -> Stats {
        let n = samples.len() as f64;
        let mean = samples.iter().sum::<f64>() / n;
        let stderr = if samples.len() > 1 {
            let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
            (var / n).sqrt()
        } else {
            0.0
        };
        Stats { mean, stderr }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeSummary {
    pub scheme: Scheme,
    pub capacity: Stats,
    pub sum_mse: Stats,
    /// Capacities sorted ascending; the support of the empirical CDF.
    pub capacity_ecdf: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PointResult {
    pub value: f64,
    /// Trial-major, schemes in campaign order within a trial.
    pub records: Vec<TrialRecord>,
    pub summaries: Vec<SchemeSummary>,
}

impl PointResult {
    pub fn records_for(&self, scheme: Scheme) -> impl Iterator<Item = &TrialRecord> {
        self.records.iter().filter(move |r| r.scheme == scheme)
    }

    pub fn summary(&self, scheme: Scheme) -> Option<&SchemeSummary> {
        self.summaries.iter().find(|s| s.scheme == scheme)
    }

    /// Mean and standard error of the per-trial difference `metric(a) - metric(b)`.
    pub fn paired_difference(
        &self,
        a: Scheme,
        b: Scheme,
        metric: impl Fn(&TrialRecord) -> f64,
    ) -> Stats {
        let diffs: Vec<f64> = self
            .records_for(a)
            .zip(self.records_for(b))
            .map(|(ra, rb)| {
                debug_assert_eq!(ra.trial_index, rb.trial_index);
                metric(ra) - metric(rb)
            })
            .collect();
        Stats::of(&diffs)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CampaignResult {
    pub sweep_variable: String,
    pub sweep: Sweep,
    pub mode: Mode,
    pub schemes: Vec<Scheme>,
    pub trials: u64,
    pub config: NetworkConfig,
    pub points: Vec<PointResult>,
}

fn run_trial(config: &NetworkConfig, trial_index: u64, schemes: &[Scheme]) -> Result<Vec<TrialRecord>> {
    let channels = generate_channels(config, trial_index);
    let designs = design_schemes(&channels, config, schemes)?;
    designs
        .iter()
        .map(|d| {
            let eval = evaluate_design(&channels, d)?;
            let (alpha_min, alpha_max) = d
                .alpha_iterates
                .iter()
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &a| (lo.min(a), hi.max(a)));
            let best_seen = d.objective_trace.iter().copied().fold(d.initial_objective, |acc, v| {
                match d.mode {
                    Mode::Capacity => acc.max(v),
                    Mode::Mse => acc.min(v),
                }
            });
            Ok(TrialRecord {
                trial_index,
                scheme: d.scheme,
                capacity_bits: eval.sum_capacity,
                sum_mse: eval.sum_mse,
                outer_iters: d.outer_iters,
                converged: d.converged,
                stopped_on_worsening: d.stopped_on_worsening,
                non_monotone_sweeps: d.non_monotone_sweeps,
                inner_maxed_out: d.inner_maxed_out,
                alpha_final: d.alpha_final,
                alpha_min: if d.alpha_iterates.is_empty() { 0.0 } else { alpha_min },
                alpha_max: if d.alpha_iterates.is_empty() { 0.0 } else { alpha_max },
                power_residual: d.power_residual,
                worst_power_ratio: d.worst_power_ratio(&channels, config),
                best_so_far_gap: d.objective - best_seen,
            })
        })
        .collect()
}

fn summarize(records: &[TrialRecord], schemes: &[Scheme]) -> Vec<SchemeSummary> {
    schemes
        .iter()
        .map(|&scheme| {
            let caps: Vec<f64> = records
                .iter()
                .filter(|r| r.scheme == scheme)
                .map(|r| r.capacity_bits)
                .collect();
            let mses: Vec<f64> = records
                .iter()
                .filter(|r| r.scheme == scheme)
                .map(|r| r.sum_mse)
                .collect();
            let mut sorted = caps.clone();
            sorted.sort_by(f64::total_cmp);
            SchemeSummary {
                scheme,
                capacity: Stats::of(&caps),
                sum_mse: Stats::of(&mses),
                capacity_ecdf: sorted,
            }
        })
        .collect()
}

/// Runs `trials` realizations of every scheme at every sweep point.
pub fn run_campaign(
    config: &NetworkConfig,
    schemes: &[Scheme],
    sweep: &Sweep,
    trials: u64,
) -> Result<CampaignResult> {
    config.validate()?;
    sweep.validate(config)?;
    if trials == 0 {
        return Err(Error::InvalidConfig("trials must be >= 1".into()));
    }
    let mut unique = schemes.to_vec();
    unique.sort();
    unique.dedup();
    if unique.len() != schemes.len() {
        return Err(Error::InvalidConfig("scheme list contains duplicates".into()));
    }

    let mut points = Vec::new();
    for value in sweep.values(config) {
        let point_config = sweep.apply(config, value);
        point_config.validate()?;
        info!("{} = {value}: {trials} trials", sweep.variable());
        let per_trial: Vec<Vec<TrialRecord>> = if schemes.is_empty() {
            Vec::new()
        } else {
            (0..trials)
                .into_par_iter()
                .map(|t| run_trial(&point_config, t, schemes))
                .collect::<Result<_>>()?
        };
        let records: Vec<TrialRecord> = per_trial.into_iter().flatten().collect();
        let summaries = if schemes.is_empty() {
            Vec::new()
        } else {
            summarize(&records, schemes)
        };
        for s in &summaries {
            info!(
                "  {}: capacity {:.4} ± {:.4}, sum-MSE {:.4} ± {:.4}",
                s.scheme, s.capacity.mean, s.capacity.stderr, s.sum_mse.mean, s.sum_mse.stderr
            );
        }
        points.push(PointResult {
            value,
            records,
            summaries,
        });
    }
    Ok(CampaignResult {
        sweep_variable: sweep.variable().to_string(),
        sweep: sweep.clone(),
        mode: config.mode,
        schemes: schemes.to_vec(),
        trials,
        config: config.clone(),
        points,
    })
}

/// Empirical CDF: sorted samples paired with step heights `k/n`.
pub fn ecdf(samples: &[f64]) -> Result<Vec<(f64, f64)>> {
    if samples.is_empty() {
        return Err(Error::EmptySamples);
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let n = sorted.len() as f64;
    Ok(sorted
        .into_iter()
        .enumerate()
        .map(|(k, x)| (x, (k + 1) as f64 / n))
        .collect())
}

#[derive(Serialize)]
struct CurveRow {
    sweep_value: f64,
    scheme: Scheme,
    value: f64,
    stderr: f64,
    trials: u64,
}

#[derive(Serialize)]
struct CdfRow {
    capacity: f64,
    cdf: f64,
    scheme: Scheme,
}

#[derive(Serialize)]
struct Manifest<'a> {
    tool: &'static str,
    version: &'static str,
    git_describe: &'static str,
    seed: u64,
    mode: Mode,
    sweep_variable: &'a str,
    sweep_values: Vec<f64>,
    schemes: &'a [Scheme],
    trials: u64,
    config: &'a NetworkConfig,
    files: Vec<String>,
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    let file = fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .has_headers(false)
        .from_writer(file))
}

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |source| Error::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn write_curve(
    path: &Path,
    header: [&str; 5],
    result: &CampaignResult,
    metric: impl Fn(&SchemeSummary) -> Stats,
) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(header).map_err(csv_err(path))?;
    for point in &result.points {
        for s in &point.summaries {
            let stats = metric(s);
            w.serialize(CurveRow {
                sweep_value: point.value,
                scheme: s.scheme,
                value: stats.mean,
                stderr: stats.stderr,
                trials: result.trials,
            })
            .map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_trials(path: &Path, result: &CampaignResult) -> Result<()> {
    let file = fs::File::create(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .has_headers(false)
        .from_writer(file);
    // rows are (sweep value, record) tuples, which csv cannot name
    w.write_record([
        result.sweep_variable.as_str(),
        "trial_index",
        "scheme",
        "capacity_bits",
        "sum_mse",
        "outer_iters",
        "converged",
        "stopped_on_worsening",
        "non_monotone_sweeps",
        "inner_maxed_out",
        "alpha_final",
        "alpha_min",
        "alpha_max",
        "power_residual",
        "worst_power_ratio",
        "best_so_far_gap",
    ])
    .map_err(csv_err(path))?;
    for point in &result.points {
        for r in &point.records {
            w.serialize((point.value, r)).map_err(csv_err(path))?;
        }
    }
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the figure CSVs for the campaign's mode and sweep, a per-trial
/// table and `campaign.json`. Returns the paths written, manifest last.
///
/// Capacity campaigns produce `capacity_vs_power.csv` (with one
/// `cdf_<power>.csv` per power point) or `capacity_vs_lsr.csv`; MSE campaigns
/// produce `mse_vs_power.csv` or `mse_vs_lsr.csv`. With no schemes only the
/// manifest is written.
pub fn write_results(result: &CampaignResult, out_dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out_dir).map_err(|source| Error::Io {
        path: out_dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    if !result.schemes.is_empty() {
        let by_lsr = matches!(result.sweep, Sweep::Lsr(_));
        let axis = if by_lsr { "l_sr" } else { "power_db" };
        match result.mode {
            Mode::Capacity => {
                let name = if by_lsr { "capacity_vs_lsr.csv" } else { "capacity_vs_power.csv" };
                let path = out_dir.join(name);
                write_curve(
                    &path,
                    [axis, "scheme", "ergodic_capacity", "stderr", "trials"],
                    result,
                    |s| s.capacity,
                )?;
                written.push(path);
                if !by_lsr {
                    for point in &result.points {
                        let path = out_dir.join(format!("cdf_{}.csv", point.value));
                        let mut w = csv_writer(&path)?;
                        w.write_record(["capacity", "cdf", "scheme"]).map_err(csv_err(&path))?;
                        for s in &point.summaries {
                            for (capacity, cdf) in ecdf(&s.capacity_ecdf)? {
                                w.serialize(CdfRow {
                                    capacity,
                                    cdf,
                                    scheme: s.scheme,
                                })
                                .map_err(csv_err(&path))?;
                            }
                        }
                        w.flush().map_err(|source| Error::Io {
                            path: path.clone(),
                            source,
                        })?;
                        written.push(path);
                    }
                }
            }
            Mode::Mse => {
                let name = if by_lsr { "mse_vs_lsr.csv" } else { "mse_vs_power.csv" };
                let path = out_dir.join(name);
                write_curve(
                    &path,
                    [axis, "scheme", "sum_mse", "stderr", "trials"],
                    result,
                    |s| s.sum_mse,
                )?;
                written.push(path);
            }
        }
        let path = out_dir.join("trials.csv");
        write_trials(&path, result)?;
        written.push(path);
    }

    let manifest_path = out_dir.join("campaign.json");
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        git_describe: env!("MIMO_RELAY_GIT_DESCRIBE"),
        seed: result.config.seed,
        mode: result.mode,
        sweep_variable: &result.sweep_variable,
        sweep_values: result.points.iter().map(|p| p.value).collect(),
        schemes: &result.schemes,
        trials: result.trials,
        config: &result.config,
        files: written
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
    };
    let mut json = serde_json::to_string_pretty(&manifest).map_err(|source| Error::Json {
        path: manifest_path.clone(),
        source,
    })?;
    json.push('\n');
    fs::write(&manifest_path, json).map_err(|source| Error::Io {
        path: manifest_path.clone(),
        source,
    })?;
    written.push(manifest_path);
    Ok(written)
}

const PLOT_SCRIPT: &str = r#"#!/usr/bin/env python3
"""Plots every figure CSV found next to this script (needs pandas and matplotlib)."""
import glob
import os

import matplotlib.pyplot as plt
import pandas as pd

here = os.path.dirname(os.path.abspath(__file__))
for path in sorted(glob.glob(os.path.join(here, "*.csv"))):
    name = os.path.basename(path)
    if name == "trials.csv":
        continue
    df = pd.read_csv(path)
    fig, ax = plt.subplots()
    if name.startswith("cdf_"):
        for scheme, g in df.groupby("scheme"):
            ax.step(g["capacity"], g["cdf"], where="post", label=scheme)
        ax.set_xlabel("capacity (bits/channel use)")
        ax.set_ylabel("CDF")
    else:
        x, y = df.columns[0], df.columns[2]
        for scheme, g in df.groupby("scheme"):
            ax.errorbar(g[x], g[y], yerr=g["stderr"], marker="o", label=scheme)
        ax.set_xlabel(x)
        ax.set_ylabel(y)
    ax.grid(True)
    ax.legend()
    fig.savefig(os.path.join(here, name[:-4] + ".png"), dpi=150)
    plt.close(fig)
"#;

/// Writes `plot_results.py`, which renders each figure CSV in `out_dir` to PNG.
pub fn write_plot_script(out_dir: &Path) -> Result<PathBuf> {
    let path = out_dir.join("plot_results.py");
    let mut f = fs::File::create(&path).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    f.write_all(PLOT_SCRIPT.as_bytes()).map_err(|source| Error::Io {
        path: path.clone(),
        source,
    })?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_config() -> NetworkConfig {
        NetworkConfig {
            n_s: 2,
            n_r: 2,
            n_d: 2,
            seed: 5,
            ..NetworkConfig::default()
        }
    }

    #[test]
    fn ecdf_examples() {
        assert_eq!(ecdf(&[3.0]).unwrap(), vec![(3.0, 1.0)]);
        assert_eq!(ecdf(&[2.0, 1.0]).unwrap(), vec![(1.0, 0.5), (2.0, 1.0)]);
        assert!(matches!(ecdf(&[]), Err(Error::EmptySamples)));
    }

    #[test]
    fn ecdf_of_normals_is_half_at_zero() {
        use rand::SeedableRng;
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let draws: Vec<f64> = (0..1000).map(|_| StandardNormal.sample(&mut rng)).collect();
        let table = ecdf(&draws).unwrap();
        let at_zero = table
            .iter()
            .take_while(|(x, _)| *x <= 0.0)
            .last()
            .map_or(0.0, |(_, p)| *p);
        assert!((at_zero - 0.5).abs() <= 0.05);
        assert!(table.windows(2).all(|w| w[0].0 <= w[1].0 && w[0].1 < w[1].1));
        assert_eq!(table.last().unwrap().1, 1.0);
    }

    #[test]
    fn sweep_configurations() {
        let c = NetworkConfig::default();
        let p = Sweep::Power(vec![20.0, 28.0]);
        assert_eq!(p.values(&c), vec![20.0, 28.0]);
        let at28 = p.apply(&c, 28.0);
        assert!((at28.p_r - 10f64.powf(2.8)).abs() < 1e-9);
        assert_eq!(at28.p1, at28.p2);

        let l = Sweep::Lsr((2..=8).map(f64::from).collect());
        let at3 = l.apply(&c, 3.0);
        assert_eq!((at3.l_sr, at3.l_rd, at3.l_sd()), (3.0, 7.0, 10.0));
        assert!(l.validate(&c).is_ok());
        assert!(Sweep::Lsr(vec![10.0]).validate(&c).is_err());
        assert!(Sweep::Power(vec![]).validate(&c).is_err());
        assert!(Sweep::Power(vec![f64::NAN]).validate(&c).is_err());
    }

    #[test]
    fn invalid_sweep_fails_before_compute() {
        let err = run_campaign(&small_config(), &[Scheme::Jds], &Sweep::Lsr(vec![-1.0]), 3);
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
        let err = run_campaign(&small_config(), &[Scheme::Jds], &Sweep::None, 0);
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
        let err = run_campaign(&small_config(), &[Scheme::Jds, Scheme::Jds], &Sweep::None, 1);
        assert!(matches!(err, Err(Error::InvalidConfig(_))));
    }

    #[test]
    fn single_trial_means_equal_the_record() {
        let res = run_campaign(&small_config(), &Scheme::ALL, &Sweep::None, 1).unwrap();
        let point = &res.points[0];
        for s in &point.summaries {
            let r = point.records_for(s.scheme).next().unwrap();
            assert_eq!(s.capacity.mean, r.capacity_bits);
            assert_eq!(s.sum_mse.mean, r.sum_mse);
            assert_eq!(s.capacity.stderr, 0.0);
        }
    }

    #[test]
    fn paired_rows_share_channels() {
        let res = run_campaign(&small_config(), &Scheme::ALL, &Sweep::Power(vec![20.0]), 6).unwrap();
        let point = &res.points[0];
        for (sos, nod) in point.records_for(Scheme::Sos).zip(point.records_for(Scheme::Nod)) {
            assert_eq!(sos.trial_index, nod.trial_index);
            assert!(sos.capacity_bits >= nod.capacity_bits - 1e-12);
        }
        let d = point.paired_difference(Scheme::Sos, Scheme::Nod, |r| r.capacity_bits);
        assert!(d.mean >= 0.0);
    }

    #[test]
    fn writes_expected_files() {
        let dir = tempfile::tempdir().unwrap();
        let res = run_campaign(&small_config(), &[Scheme::Nas, Scheme::Jds], &Sweep::Power(vec![20.0]), 2).unwrap();
        let files = write_results(&res, dir.path()).unwrap();
        let names: Vec<_> = files.iter().map(|p| p.file_name().unwrap().to_str().unwrap().to_string()).collect();
        assert_eq!(names, ["capacity_vs_power.csv", "cdf_20.csv", "trials.csv", "campaign.json"]);
        let curve = fs::read_to_string(dir.path().join("capacity_vs_power.csv")).unwrap();
        let lines: Vec<_> = curve.lines().collect();
        assert_eq!(lines[0], "power_db,scheme,ergodic_capacity,stderr,trials");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("20.0,nas,"));
        assert!(!curve.contains('\r'));
        let trials = fs::read_to_string(dir.path().join("trials.csv")).unwrap();
        assert_eq!(trials.lines().count(), 5);
        assert!(trials.lines().nth(1).unwrap().starts_with("20.0,0,nas,"));

        let empty = run_campaign(&small_config(), &[], &Sweep::None, 1).unwrap();
        let dir2 = tempfile::tempdir().unwrap();
        let files = write_results(&empty, dir2.path()).unwrap();
        assert_eq!(files.len(), 1);
        assert!(files[0].ends_with("campaign.json"));
    }
}
