//! Subcommand definitions and their implementations.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use mrstd_core::simulation::{
    run_experiment, run_ics_power, scenario_contrast, true_estimands, ScenarioName, SimulationConfig,
    SimulationPlan, TruthValues,
};
use mrstd_core::{
    estimate_many, ics_covariance_diagnostic, ics_test, CustomWeight, EstimandSpec, EstimateOptions, Icc,
    RandomizationDesign, SchemeMatrix, WeightScheme,
};

use crate::config::{AnalysisConfig, DesignConfig, NamedWeights, WeightsConfig};
use crate::ingest::{read_long, Loaded};
use crate::output::{Cell, Format, Provenance, Table};
use crate::CliError;

/// Model-robust standardization for cluster-randomized trials.
#[derive(Debug, Parser)]
#[command(name = "mrstd", version, about)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads (default: all cores). Results do not depend on it.
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// Write results here instead of standard output.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, global = true, value_enum, default_value_t = Format::Table)]
    pub format: Format,
    /// Check the configuration and exit without running.
    #[arg(long, global = true)]
    pub validate_config: bool,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Estimate cluster- and individual-average effects for each working model.
    Analyze,
    /// Test whether the two estimands differ (informative cluster size).
    IcsTest,
    /// Run a simulation experiment.
    Simulate,
    /// Compute super-population values of the estimands.
    Truth {
        /// Scenario, when no configuration file is given.
        #[arg(long, value_parser = parse_scenario)]
        scenario: Option<ScenarioName>,
        /// Clusters per trial; sets the cluster-size distribution.
        #[arg(long)]
        m: Option<usize>,
        /// Super-population size in clusters.
        #[arg(long)]
        size: Option<usize>,
        /// δ for the ICS scenarios.
        #[arg(long, value_delimiter = ',')]
        deltas: Vec<f64>,
    },
    /// Check an input file against the configured column roles.
    Validate,
}

fn parse_scenario(s: &str) -> Result<ScenarioName, String> {
    serde_json::from_value(serde_json::Value::String(s.to_owned())).map_err(|_| {
        "expected one of cont_noninf, cont_inf, bin_noninf, bin_inf, cont_ics, bin_ics".to_owned()
    })
}

fn read_config(path: Option<&Path>) -> Result<(Vec<u8>, PathBuf), CliError> {
    let path = path.ok_or_else(|| CliError::input("this command needs --config"))?;
    let bytes = fs::read(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))?;
    let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
    Ok((bytes, base))
}

fn text(bytes: &[u8]) -> Result<&str, CliError> {
    std::str::from_utf8(bytes).map_err(|_| CliError::input("configuration is not UTF-8"))
}

fn parse_simulation(bytes: &[u8]) -> Result<SimulationConfig, CliError> {
    toml::from_str(text(bytes)?).map_err(|e| CliError::input(format!("configuration: {e}")))
}

/// Runs the parsed command and renders its output.
pub fn run(cli: &Cli) -> Result<String, CliError> {
    match &cli.command {
        Command::Analyze | Command::IcsTest | Command::Validate => {
            let (bytes, base) = read_config(cli.config.as_deref())?;
            let cfg = AnalysisConfig::parse(text(&bytes)?, &base)?;
            if cli.validate_config {
                return Ok("configuration OK\n".into());
            }
            let prov = Provenance::new(cli.seed.unwrap_or(cfg.seed), &bytes);
            let table = match cli.command {
                Command::Analyze => analyze(&cfg)?,
                Command::IcsTest => ics(&cfg)?,
                _ => validate_input(&cfg)?,
            };
            Ok(table.render(cli.format, &prov))
        }
        Command::Simulate => {
            let (bytes, _) = read_config(cli.config.as_deref())?;
            let mut sim = parse_simulation(&bytes)?;
            if let Some(seed) = cli.seed {
                sim.seed = seed;
            }
            let plan = sim.plan()?;
            if cli.validate_config {
                return Ok("configuration OK\n".into());
            }
            let prov = Provenance::new(sim.seed, &bytes);
            Ok(simulate(&sim, plan)?.render(cli.format, &prov))
        }
        Command::Truth { scenario, m, size, deltas } => {
            let (bytes, mut sim) = match (&cli.config, scenario, m) {
                (Some(path), None, None) => {
                    let (bytes, _) = read_config(Some(path))?;
                    let sim = parse_simulation(&bytes)?;
                    (bytes, sim)
                }
                (None, Some(s), Some(m)) => {
                    let canonical = serde_json::json!({ "scenario": s, "m": m, "n_sim": 1, "deltas": deltas });
                    let sim: SimulationConfig = serde_json::from_value(canonical.clone()).map_err(CliError::input)?;
                    (canonical.to_string().into_bytes(), sim)
                }
                _ => return Err(CliError::input("truth needs either --config or both --scenario and --m")),
            };
            if let Some(size) = size {
                sim.truth.size = *size;
            }
            if let Some(seed) = cli.seed {
                sim.truth.seed = seed;
            }
            sim.plan()?;
            if cli.validate_config {
                return Ok("configuration OK\n".into());
            }
            let prov = Provenance::new(sim.truth.seed, &bytes);
            Ok(truth(&sim)?.render(cli.format, &prov))
        }
    }
}

fn design(cfg: &AnalysisConfig) -> Result<RandomizationDesign, CliError> {
    Ok(match &cfg.design {
        DesignConfig::Simple { probability } => RandomizationDesign::Simple(*probability),
        DesignConfig::Stratified { probabilities } => RandomizationDesign::Stratified(probabilities.clone()),
        DesignConfig::PairMatched => RandomizationDesign::PairMatched,
        DesignConfig::Constrained { schemes, header } => {
            let f = fs::File::open(schemes).map_err(|e| CliError::input(format!("{}: {e}", schemes.display())))?;
            RandomizationDesign::Constrained(SchemeMatrix::from_csv(f, *header)?)
        }
    })
}

fn load(cfg: &AnalysisConfig) -> Result<Loaded, CliError> {
    let f = fs::File::open(&cfg.input).map_err(|e| CliError::input(format!("{}: {e}", cfg.input.display())))?;
    read_long(f, &cfg.columns, &cfg.weight_columns())
}

fn estimands(cfg: &AnalysisConfig, loaded: &Loaded) -> Vec<EstimandSpec> {
    cfg.estimands
        .iter()
        .map(|e| {
            let scheme = match &e.weights {
                WeightsConfig::Named(NamedWeights::Cluster) => WeightScheme::Cluster,
                WeightsConfig::Named(NamedWeights::Individual) => WeightScheme::Individual,
                WeightsConfig::Subgroup { subgroup, value } => WeightScheme::Subgroup {
                    component: cfg.columns.cluster_covariates.iter().position(|c| c == subgroup).expect("checked"),
                    value: *value,
                },
                WeightsConfig::Column { column } => {
                    let map = loaded.weight_columns[column].clone();
                    WeightScheme::Custom(CustomWeight::new(move |c| map[&c.id]))
                }
            };
            EstimandSpec::new(scheme, e.contrast)
        })
        .collect()
}

fn icc_cells(icc: Option<Icc>) -> [Cell; 3] {
    match icc {
        Some(Icc::Single { rho }) => [rho.into(), Cell::Missing, Cell::Missing],
        Some(Icc::PerArm { rho0, rho1 }) => [Cell::Missing, rho0.into(), rho1.into()],
        None => [Cell::Missing, Cell::Missing, Cell::Missing],
    }
}

pub fn analyze(cfg: &AnalysisConfig) -> Result<Table, CliError> {
    let loaded = load(cfg)?;
    let design = design(cfg)?;
    let specs = estimands(cfg, &loaded);
    let opts = EstimateOptions { level: cfg.level, refit_policy: cfg.refit_policy };
    let mut t = Table::new(vec![
        "model", "weights", "contrast", "estimate", "se", "se_delta", "ci_lower", "ci_upper", "level", "df", "icc",
        "icc_control", "icc_treated", "refit_failures",
    ]);
    for model in &cfg.models {
        let (name, spec) = model.resolve()?;
        let results = estimate_many(&loaded.data, &design, &spec, &specs, opts)
            .map_err(|e| CliError { message: format!("model {name}: {e}"), ..CliError::from(e) })?;
        for (r, e) in results.into_iter().zip(&cfg.estimands) {
            let [icc, icc0, icc1] = icc_cells(r.icc);
            t.push(vec![
                name.clone().into(),
                e.weights.label().into(),
                r.contrast.label().into(),
                r.estimate.into(),
                r.se.into(),
                r.se_delta.into(),
                r.ci_lower.into(),
                r.ci_upper.into(),
                r.level.into(),
                r.df.into(),
                icc,
                icc0,
                icc1,
                r.refit_failures.join(";").into(),
            ]);
        }
    }
    Ok(t)
}

pub fn ics(cfg: &AnalysisConfig) -> Result<Table, CliError> {
    let loaded = load(cfg)?;
    let design = design(cfg)?;
    let scale = cfg.scale();
    let covariance = ics_covariance_diagnostic(&loaded.data, &design)?;
    let mut t = Table::new(vec![
        "model", "scale", "delta_c", "delta_i", "d_hat", "se", "statistic", "df", "p_value", "size_covariance",
        "refit_failures",
    ]);
    for model in &cfg.models {
        let (name, spec) = model.resolve()?;
        let r = ics_test(&loaded.data, &design, &spec, scale, cfg.refit_policy)
            .map_err(|e| CliError { message: format!("model {name}: {e}"), ..CliError::from(e) })?;
        t.push(vec![
            name.into(),
            scale.contrast().label().into(),
            r.delta_c.into(),
            r.delta_i.into(),
            r.d_hat.into(),
            r.v_hat.sqrt().into(),
            r.statistic.into(),
            r.df.into(),
            r.p_value.into(),
            covariance.into(),
            r.refit_failures.join(";").into(),
        ]);
    }
    Ok(t)
}

pub fn validate_input(cfg: &AnalysisConfig) -> Result<Table, CliError> {
    let loaded = load(cfg)?;
    // the design must also be consistent with the clusters
    mrstd_core::assignment_probabilities(&design(cfg)?, &loaded.data)?;
    let d = &loaded.data;
    let sizes = d.sizes();
    let treated = d.clusters.iter().filter(|c| c.treated).count();
    let mut t = Table::new(vec!["clusters", "treated", "control", "individuals", "min_size", "max_size"]);
    t.push(vec![
        d.m().into(),
        treated.into(),
        (d.m() - treated).into(),
        d.total_individuals().into(),
        sizes.iter().copied().min().unwrap_or(0).into(),
        sizes.iter().copied().max().unwrap_or(0).into(),
    ]);
    Ok(t)
}

fn supplied_truth(sim: &SimulationConfig, outcome: mrstd_core::simulation::OutcomeType) -> Option<TruthValues> {
    let (delta_c, delta_i) = (sim.truth.delta_c?, sim.truth.delta_i?);
    Some(TruthValues {
        delta_c,
        delta_i,
        se_c: f64::NAN,
        se_i: f64::NAN,
        se_diff: f64::NAN,
        mu_c: [f64::NAN; 2],
        mu_i: [f64::NAN; 2],
        clusters: 0,
        contrast: scenario_contrast(outcome),
        size_effect_covariance: f64::NAN,
    })
}

pub fn simulate(sim: &SimulationConfig, plan: SimulationPlan) -> Result<Table, CliError> {
    match plan {
        SimulationPlan::Metrics { experiment, truth } => {
            let outcome = experiment.dgp.scenario.outcome();
            let tv = match supplied_truth(sim, outcome) {
                Some(tv) => tv,
                None => true_estimands(&experiment.dgp, truth.size, truth.seed)?,
            };
            let out = run_experiment(&experiment, &tv)?;
            let mut t = Table::new(vec![
                "scenario", "m", "n_sim", "estimator", "model", "target", "truth", "n_ok", "failures",
                "mean_estimate", "bias_pct", "mcsd", "aese", "aese_mcsd", "coverage", "coverage_lower",
                "coverage_upper",
            ]);
            let scenario = experiment.dgp.scenario.label();
            for r in out.rows {
                let failures = out.failures.iter().find(|f| f.model == r.model).map_or(0, |f| f.failures);
                t.push(vec![
                    scenario.clone().into(),
                    experiment.dgp.m.into(),
                    out.n_sim.into(),
                    r.estimator.into(),
                    r.model.into(),
                    r.target.into(),
                    r.truth.into(),
                    r.n_ok.into(),
                    failures.into(),
                    r.mean_estimate.into(),
                    r.bias_pct.into(),
                    r.mcsd.into(),
                    r.aese.into(),
                    (r.aese / r.mcsd).into(),
                    r.coverage.into(),
                    r.coverage_lower.into(),
                    r.coverage_upper.into(),
                ]);
            }
            Ok(t)
        }
        SimulationPlan::IcsPower { dgps, models, n_sim, seed, alpha } => {
            let rows = run_ics_power(&dgps, &models, n_sim, seed, alpha)?;
            let mut t = Table::new(vec![
                "scenario", "m", "delta", "model", "n_ok", "rejections", "rejection_rate", "mean_delta_c",
                "mean_delta_i",
            ]);
            for r in rows {
                t.push(vec![
                    r.scenario.into(),
                    r.m.into(),
                    r.delta.into(),
                    r.model.into(),
                    r.n_ok.into(),
                    r.rejections.into(),
                    r.rejection_rate.into(),
                    r.mean_delta_c.into(),
                    r.mean_delta_i.into(),
                ]);
            }
            Ok(t)
        }
    }
}

pub fn truth(sim: &SimulationConfig) -> Result<Table, CliError> {
    let dgps = match sim.plan()? {
        SimulationPlan::Metrics { experiment, .. } => vec![experiment.dgp],
        SimulationPlan::IcsPower { dgps, .. } => dgps,
    };
    let mut t = Table::new(vec![
        "scenario", "m", "clusters", "contrast", "delta_c", "se_c", "delta_i", "se_i", "se_diff", "mu_c_treated",
        "mu_c_control", "mu_i_treated", "mu_i_control", "size_effect_covariance",
    ]);
    for dgp in dgps {
        let v = true_estimands(&dgp, sim.truth.size, sim.truth.seed)?;
        t.push(vec![
            dgp.scenario.label().into(),
            dgp.m.into(),
            v.clusters.into(),
            v.contrast.label().into(),
            v.delta_c.into(),
            v.se_c.into(),
            v.delta_i.into(),
            v.se_i.into(),
            v.se_diff.into(),
            v.mu_c[0].into(),
            v.mu_c[1].into(),
            v.mu_i[0].into(),
            v.mu_i[1].into(),
            v.size_effect_covariance.into(),
        ]);
    }
    Ok(t)
}
