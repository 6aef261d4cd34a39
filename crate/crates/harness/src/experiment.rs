//! Multi-seed experiment execution with equal sample budgets, aggregation
//! and file emission.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use rand::Rng;

use sqn_core::baselines::{run_sdlbfgs, run_sgd, run_vr_spider, SdLbfgsConfig, SgdConfig, VrSpiderConfig};
use sqn_core::objectives::{generate_synthetic, Dataset, DatasetObjective, ObjectiveKind, SmoothnessParams};
use sqn_core::optimizer::{run as run_sqn, BatchPlan, BudgetMode, ClippedSqnConfig};
use sqn_core::quasi_newton::{DampingParams, EigenBounds};
use sqn_core::rng::{standard_normal, stream_rng, Stream};
use sqn_core::spider::SamplingMode;
use sqn_core::trace::RunTrace;

use crate::config::{AlgorithmConfig, DatasetSection, ExperimentConfig, InitMode, ObjectiveName};
use crate::csvio;
use crate::svg::{emit_plot, PlotAxes, PlotSeries};
use crate::{HarnessError, Result};

/// Flags carried from the command line into the run.
#[derive(Debug, Clone, Copy, Default)]
pub struct RunOptions {
    pub strict_theory: bool,
    pub theory_batches: bool,
}

#[derive(Debug, Clone)]
pub struct AlgorithmSummary {
    pub name: String,
    pub mean_final_loss: f64,
    pub std_final_loss: f64,
    pub final_samples: Vec<usize>,
    /// Stepsize picked by the grid search, when one ran.
    pub chosen_stepsize: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ComparisonReport {
    /// Roster order.
    pub summaries: Vec<AlgorithmSummary>,
    /// Algorithm names sorted by ascending mean final loss.
    pub ranking: Vec<String>,
    /// (algorithm, seed, reason) for every aborted run.
    pub aborts: Vec<(String, u64, String)>,
}

pub struct ExperimentOutput {
    pub report: ComparisonReport,
    pub report_text: String,
    pub written: Vec<PathBuf>,
}

pub fn resolve_dataset(cfg: &ExperimentConfig) -> Result<Dataset> {
    let data = match &cfg.dataset {
        DatasetSection::Generate { .. } => {
            let syn = cfg.dataset.synthetic_config().expect("generate branch");
            generate_synthetic(&syn).map_err(HarnessError::from)?
        }
        DatasetSection::File { path } => Dataset::load(path).map_err(HarnessError::from)?,
    };
    if cfg.experiment.objective == ObjectiveName::NonconvexLogistic {
        for (i, s) in data.samples().iter().enumerate() {
            if s.label != 0.0 && s.label != 1.0 {
                return Err(HarnessError::Config(format!(
                    "the logistic objective needs labels in {{0, 1}}; sample {i} has {}",
                    s.label
                )));
            }
        }
    }
    Ok(data)
}

/// Initial iterate for one seed, shared by every algorithm in the roster.
pub fn initial_point(seed: u64, dimension: usize, mode: InitMode, scale: f64) -> Vec<f64> {
    let mut rng = stream_rng(seed, Stream::Init);
    match mode {
        InitMode::Normal => (0..dimension).map(|_| scale * standard_normal(&mut rng)).collect(),
        InitMode::Uniform => (0..dimension).map(|_| rng.gen_range(-scale..scale)).collect(),
    }
}

/// Execute one (algorithm, seed) run under the shared sample budget.
#[allow(clippy::too_many_arguments)]
pub fn run_algorithm(
    alg: &AlgorithmConfig,
    kind: ObjectiveKind,
    dataset: &Dataset,
    x0: &[f64],
    seed: u64,
    sample_budget: usize,
    record_every: usize,
    opts: RunOptions,
) -> Result<RunTrace> {
    let obj = DatasetObjective::new(kind, dataset);
    let trace = match alg {
        AlgorithmConfig::ClippedSqn {
            eps,
            beta,
            c_param,
            l0,
            l1,
            gamma0,
            gamma1,
            sigma,
            delta,
            q,
            kappa,
            memory,
            s1,
            s2,
            restart_period,
            lambda_min,
            lambda_max,
        } => {
            let smoothness = SmoothnessParams::new(*l0, *l1, *gamma0, *gamma1, *sigma)
                .map_err(HarnessError::from)?;
            let eigen_override = match (lambda_min, lambda_max) {
                (Some(a), Some(b)) => Some(EigenBounds::new(*a, *b).map_err(HarnessError::from)?),
                _ => None,
            };
            let cfg = ClippedSqnConfig {
                eps: *eps,
                beta: *beta,
                c_param: *c_param,
                smoothness,
                damping: DampingParams::new(*delta, *q, *kappa, *memory)
                    .map_err(HarnessError::from)?,
                eigen_override,
                batches: if opts.theory_batches {
                    BatchPlan::Theory
                } else {
                    BatchPlan::Explicit {
                        s1_size: *s1,
                        s2_size: *s2,
                        restart_period: *restart_period,
                    }
                },
                sampling: SamplingMode::WithReplacement,
                strict_theory: opts.strict_theory,
                seed,
                record_every,
                track_true_gradient: false,
            };
            run_sqn(&cfg, &obj, x0, BudgetMode::Samples(sample_budget))
                .map_err(HarnessError::from)?
        }
        AlgorithmConfig::Sgd { batch, stepsize, .. } => {
            let cfg = SgdConfig {
                batch_size: *batch,
                stepsize: stepsize.ok_or_else(|| {
                    HarnessError::Config("sgd stepsize unresolved; grid search not applied".into())
                })?,
                seed,
                record_every,
            };
            run_sgd(&cfg, &obj, x0, sample_budget).map_err(HarnessError::from)?
        }
        AlgorithmConfig::Spider { s1, s2, restart_period, smooth_l, eps } => {
            let cfg = VrSpiderConfig {
                s1_size: *s1,
                s2_size: *s2,
                restart_period: *restart_period,
                smooth_l0: *smooth_l,
                quadratic_l1: None,
                eps: *eps,
                sampling: SamplingMode::WithReplacement,
                seed,
                record_every,
            };
            run_vr_spider(&cfg, &obj, x0, sample_budget).map_err(HarnessError::from)?
        }
        AlgorithmConfig::L0l1Spider { s1, s2, restart_period, l0, l1, eps } => {
            let cfg = VrSpiderConfig {
                s1_size: *s1,
                s2_size: *s2,
                restart_period: *restart_period,
                smooth_l0: *l0,
                quadratic_l1: Some(*l1),
                eps: *eps,
                sampling: SamplingMode::WithReplacement,
                seed,
                record_every,
            };
            run_vr_spider(&cfg, &obj, x0, sample_budget).map_err(HarnessError::from)?
        }
        AlgorithmConfig::SdLbfgs { batch, eta0, q_fixed, delta, memory } => {
            let cfg = SdLbfgsConfig {
                batch_size: *batch,
                eta0: *eta0,
                q_fixed: *q_fixed,
                delta: *delta,
                memory_size: *memory,
                seed,
                record_every,
            };
            run_sdlbfgs(&cfg, &obj, x0, sample_budget).map_err(HarnessError::from)?
        }
    };
    Ok(trace)
}

/// Run every (algorithm, seed) pair, write the per-run CSVs, the aggregate
/// CSV, the comparison plot and the report. Aborted runs are recorded and
/// the experiment continues.
pub fn run_experiment(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    opts: RunOptions,
) -> Result<ExperimentOutput> {
    let dataset = resolve_dataset(cfg)?;
    let kind = cfg.experiment.objective.kind();
    let seeds = &cfg.experiment.seeds;
    let budget = cfg.experiment.sample_budget;
    let record_every = cfg.experiment.record_every;
    std::fs::create_dir_all(out_dir)?;

    let x0s: Vec<Vec<f64>> = seeds
        .iter()
        .map(|&s| {
            initial_point(s, dataset.dimension(), cfg.experiment.init, cfg.experiment.init_scale)
        })
        .collect();

    let mut written = Vec::new();
    let mut aborts = Vec::new();
    let mut summaries = Vec::new();
    let mut aggregate_rows = Vec::new();
    let mut mean_series = Vec::new();
    let mut completed_finals: Vec<usize> = Vec::new();

    for alg in &cfg.algorithms {
        let (resolved_alg, chosen_stepsize, traces) = match alg {
            AlgorithmConfig::Sgd { batch, stepsize, stepsize_grid } => {
                let grid: Vec<f64> = match (stepsize, stepsize_grid) {
                    (Some(s), _) => vec![*s],
                    (None, Some(g)) => g.clone(),
                    (None, None) => unreachable!("validated at load"),
                };
                let mut best: Option<(f64, f64, Vec<RunTrace>)> = None;
                for &eta in &grid {
                    let candidate = AlgorithmConfig::Sgd {
                        batch: *batch,
                        stepsize: Some(eta),
                        stepsize_grid: None,
                    };
                    let traces = run_all_seeds(
                        &candidate, kind, &dataset, &x0s, seeds, budget, record_every, opts,
                    )?;
                    let mean = mean_final(&traces);
                    if best.as_ref().is_none_or(|(m, _, _)| mean < *m) {
                        best = Some((mean, eta, traces));
                    }
                }
                let (_, eta, traces) = best.expect("non-empty grid");
                let resolved = AlgorithmConfig::Sgd {
                    batch: *batch,
                    stepsize: Some(eta),
                    stepsize_grid: None,
                };
                (resolved, stepsize_grid.is_some().then_some(eta), traces)
            }
            other => {
                let traces =
                    run_all_seeds(other, kind, &dataset, &x0s, seeds, budget, record_every, opts)?;
                (other.clone(), None, traces)
            }
        };

        let name = resolved_alg.name().to_string();
        for (trace, &seed) in traces.iter().zip(seeds) {
            let path = out_dir.join(format!("{name}_seed{seed}.csv"));
            csvio::write_run_csv(trace, &path)?;
            written.push(path);
            match &trace.abort {
                Some(a) => aborts.push((
                    name.clone(),
                    seed,
                    format!("iteration {}: {}", a.iteration, a.reason),
                )),
                None => completed_finals.push(trace.samples_total),
            }
        }

        let records: Vec<&[sqn_core::trace::IterationRecord]> =
            traces.iter().map(|t| t.records.as_slice()).collect();
        let rows = csvio::aggregate_rows(&name, &records)?;
        mean_series.push(PlotSeries {
            name: name.clone(),
            points: rows.iter().map(|(_, _, s, m, _)| (*s as f64, *m)).collect(),
        });
        aggregate_rows.extend(rows);

        let finals: Vec<f64> = traces.iter().map(|t| t.final_loss).collect();
        let mean = finals.iter().sum::<f64>() / finals.len() as f64;
        let var = if finals.len() > 1 {
            finals.iter().map(|l| (l - mean).powi(2)).sum::<f64>() / (finals.len() - 1) as f64
        } else {
            0.0
        };
        summaries.push(AlgorithmSummary {
            name,
            mean_final_loss: mean,
            std_final_loss: var.sqrt(),
            final_samples: traces.iter().map(|t| t.samples_total).collect(),
            chosen_stepsize,
        });
    }

    // equal-budget fairness: completed runs may differ by at most one step
    // of the largest batch in the roster (aborted runs stop early by design)
    let slack = cfg.algorithms.iter().map(|a| a.max_step_cost()).max().unwrap_or(0);
    if let (Some(&min), Some(&max)) = (completed_finals.iter().min(), completed_finals.iter().max())
    {
        if max - min > slack {
            return Err(HarnessError::Config(format!(
                "equal-budget invariant violated: final sample counts spread {} exceeds {}",
                max - min,
                slack
            )));
        }
    }

    let agg_path = out_dir.join("aggregate.csv");
    std::fs::write(&agg_path, csvio::aggregate_csv(&aggregate_rows))?;
    written.push(agg_path);

    let axes = PlotAxes {
        title: format!("{:?}: training loss vs samples", cfg.experiment.objective),
        x_label: "cumulative samples".into(),
        y_label: "training loss".into(),
        log_y: true,
    };
    let svg = emit_plot(&mean_series, &axes)?;
    let svg_path = out_dir.join("loss_vs_samples.svg");
    std::fs::write(&svg_path, svg)?;
    written.push(svg_path);

    let mut ranking: Vec<(String, f64)> =
        summaries.iter().map(|s| (s.name.clone(), s.mean_final_loss)).collect();
    ranking.sort_by(|a, b| a.1.partial_cmp(&b.1).unwrap());
    let report = ComparisonReport {
        summaries,
        ranking: ranking.into_iter().map(|(n, _)| n).collect(),
        aborts,
    };
    let report_text = render_report(cfg, &report, opts)?;
    let report_path = out_dir.join("report.txt");
    std::fs::write(&report_path, &report_text)?;
    written.push(report_path);

    Ok(ExperimentOutput { report, report_text, written })
}

#[allow(clippy::too_many_arguments)]
fn run_all_seeds(
    alg: &AlgorithmConfig,
    kind: ObjectiveKind,
    dataset: &Dataset,
    x0s: &[Vec<f64>],
    seeds: &[u64],
    budget: usize,
    record_every: usize,
    opts: RunOptions,
) -> Result<Vec<RunTrace>> {
    seeds
        .iter()
        .zip(x0s)
        .map(|(&seed, x0)| {
            run_algorithm(alg, kind, dataset, x0, seed, budget, record_every, opts)
        })
        .collect()
}

fn mean_final(traces: &[RunTrace]) -> f64 {
    traces.iter().map(|t| t.final_loss).sum::<f64>() / traces.len() as f64
}

fn render_report(
    cfg: &ExperimentConfig,
    report: &ComparisonReport,
    opts: RunOptions,
) -> Result<String> {
    let mut out = String::new();
    let _ = writeln!(out, "sqnbench experiment report");
    let _ = writeln!(out, "==========================");
    let _ = writeln!(out);
    let _ = writeln!(out, "objective: {:?}", cfg.experiment.objective);
    let _ = writeln!(out, "seeds: {:?}", cfg.experiment.seeds);
    let _ = writeln!(out, "sample budget per run: {}", cfg.experiment.sample_budget);
    let _ = writeln!(
        out,
        "flags: strict_theory = {}, theory_batches = {}",
        opts.strict_theory, opts.theory_batches
    );
    if cfg.algorithms.iter().any(|a| matches!(a, AlgorithmConfig::SdLbfgs { .. })) {
        let _ = writeln!(
            out,
            "note: sdlbfgs is a concretization: mini-batch gradients preconditioned by \
             this crate's damped L-BFGS memory at fixed weights (w = 1, fixed damping \
             threshold) with stepsize eta0/sqrt(1+k)."
        );
    }
    for s in &report.summaries {
        if let Some(eta) = s.chosen_stepsize {
            let _ = writeln!(out, "{}: stepsize {eta} selected by grid search", s.name);
        }
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "final training loss, mean +- std over seeds:");
    for s in &report.summaries {
        let _ = writeln!(
            out,
            "  {:<12} {:.6e} +- {:.2e}   final samples {:?}",
            s.name, s.mean_final_loss, s.std_final_loss, s.final_samples
        );
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "ranking (best first): {}", report.ranking.join(", "));
    let _ = writeln!(out);
    if report.aborts.is_empty() {
        let _ = writeln!(out, "aborts: none");
    } else {
        let _ = writeln!(out, "aborts:");
        for (alg, seed, reason) in &report.aborts {
            let _ = writeln!(out, "  {alg} seed {seed}: {reason}");
        }
    }
    let _ = writeln!(out);
    let _ = writeln!(out, "resolved configuration:");
    let _ = writeln!(out, "{}", cfg.to_text()?);
    Ok(out)
}

/// Rebuild the comparison plot from previously written per-run CSVs.
pub fn plot_from_dir(cfg: &ExperimentConfig, out_dir: &Path) -> Result<PathBuf> {
    let mut series = Vec::new();
    for alg in &cfg.algorithms {
        let name = alg.name();
        let mut per_seed = Vec::new();
        for &seed in &cfg.experiment.seeds {
            let path = out_dir.join(format!("{name}_seed{seed}.csv"));
            per_seed.push(csvio::read_run_csv(&path)?);
        }
        let len = per_seed[0].len();
        if per_seed.iter().any(|r| r.len() != len) {
            return Err(HarnessError::Config(format!(
                "{name}: per-seed CSVs have mismatched lengths"
            )));
        }
        let points: Vec<(f64, f64)> = (0..len)
            .map(|i| {
                let samples = per_seed[0][i].samples as f64;
                let mean =
                    per_seed.iter().map(|r| r[i].loss).sum::<f64>() / per_seed.len() as f64;
                (samples, mean)
            })
            .collect();
        series.push(PlotSeries { name: name.to_string(), points });
    }
    let axes = PlotAxes {
        title: format!("{:?}: training loss vs samples", cfg.experiment.objective),
        x_label: "cumulative samples".into(),
        y_label: "training loss".into(),
        log_y: true,
    };
    let svg = emit_plot(&series, &axes)?;
    let path = out_dir.join("loss_vs_samples.svg");
    std::fs::write(&path, svg)?;
    Ok(path)
}
