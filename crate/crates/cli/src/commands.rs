use std::path::Path;

use log::{info, warn};
use serde::{Deserialize, Serialize};

use localcar::diagnostics::{boundary_probabilities, dic};
use localcar::elicit::{self, Adjustment, EdgePriorSet, PriorFamily};
use localcar::glm::PoissonGlm;
use localcar::graph::ArealGraph;
use localcar::io::{self, CountsTable};
use localcar::sampler::{run_chains, Dataset, Iterations, Mode, ModelConfig, Smoothing};
use localcar::sim::{run_study, SimConfig, SimSetup, StudyMcmc};

use crate::manifest::{ensure_dir, RunManifest};
use crate::output::{gelman_rubin_csv, parameters_csv, risk_csv};
use crate::{CliError, CliResult, ConfigArgs, ElicitArgs, FitArgs, Method, ModeChoice, PriorChoice};

fn read_inputs(m: &mut RunManifest, counts: &Path, adjacency: &Path) -> CliResult<(CountsTable, ArealGraph)> {
    let table = io::parse_counts(&m.read_input(counts)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", counts.display())))?;
    let graph = ArealGraph::parse_adjacency(&m.read_input(adjacency)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", adjacency.display())))?;
    if graph.n() != table.n() {
        return Err(CliError::Input(format!(
            "counts file has {} areas but the adjacency file declares {}",
            table.n(),
            graph.n()
        )));
    }
    Ok((table, graph))
}

pub fn elicit(args: &ElicitArgs) -> CliResult<()> {
    let mut m = RunManifest::start("elicit", args, None)?;
    let (table, graph) = read_inputs(&mut m, &args.counts, &args.adjacency)?;
    ensure_dir(&args.out)?;

    let surface = if args.covariates {
        if !table.has_covariates() {
            return Err(CliError::Input("--covariates given but the counts file has no covariate columns".into()));
        }
        let (x, scaling) = io::standardize(&table.x, &table.covariate_names)?;
        m.detail("standardization", &scaling)?;
        let fit = PoissonGlm::fit(&table.y, &table.e, &x)?;
        m.detail("glm_beta", &fit.beta)?;
        let rows = PoissonGlm::design_rows(table.n(), &x);
        elicit::log_residual_surface(
            &table.y,
            &table.e,
            Some(Adjustment {
                rows: &rows,
                beta_hat: &fit.beta,
            }),
            args.zero_correct,
        )?
    } else {
        elicit::log_residual_surface(&table.y, &table.e, None, args.zero_correct)?
    };

    let prior = match args.method {
        Method::Geary => elicit::geary_prior(&surface, &graph)?,
        Method::Moran => elicit::moran_prior(&surface, &graph)?,
    };
    if prior.is_degenerate() {
        warn!("the residual surface carries no spatial information; every probability sits at its clamp");
    }
    m.detail("degenerate", &prior.is_degenerate())?;
    m.write_output(&args.out, "prior.csv", &prior.to_csv())?;
    m.finish(&args.out)
}

fn smoothing(args: &FitArgs, m: &mut RunManifest, graph: &ArealGraph) -> CliResult<Smoothing> {
    let elicited = |m: &mut RunManifest| -> CliResult<EdgePriorSet> {
        let path = args
            .prior_file
            .as_deref()
            .ok_or_else(|| CliError::Input("the geary and moran priors need --prior-file".into()))?;
        EdgePriorSet::from_csv(&m.read_input(path)?, graph)
            .map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
    };
    if args.prior_file.is_some() && !matches!(args.prior, PriorChoice::Geary | PriorChoice::Moran) {
        return Err(CliError::Input("--prior-file only applies to the geary and moran priors".into()));
    }
    Ok(match args.prior {
        PriorChoice::Leroux => Smoothing::Global,
        PriorChoice::FlatA => Smoothing::Local(PriorFamily::FlatA { p0: args.p0 }),
        PriorChoice::PriorB => Smoothing::Local(PriorFamily::GlobalAlphaB),
        PriorChoice::PriorC => Smoothing::Local(PriorFamily::EdgeAlphaC),
        PriorChoice::Geary => Smoothing::Local(PriorFamily::InformativeGeary(elicited(m)?)),
        PriorChoice::Moran => Smoothing::Local(PriorFamily::InformativeMoran(elicited(m)?)),
    })
}

pub fn fit(args: &FitArgs) -> CliResult<()> {
    let mut m = RunManifest::start("fit", args, Some(args.seed))?;
    let (table, graph) = read_inputs(&mut m, &args.counts, &args.adjacency)?;
    let mode = match args.mode {
        ModeChoice::Covariate => Mode::Covariate,
        ModeChoice::Boundary => Mode::Boundary,
    };
    if mode == Mode::Boundary && table.has_covariates() {
        return Err(CliError::Input(
            "boundary mode takes no covariates; drop the covariate columns or use --mode covariate".into(),
        ));
    }
    let x = if table.has_covariates() {
        let (x, scaling) = io::standardize(&table.x, &table.covariate_names)?;
        m.detail("standardization", &scaling)?;
        Some(x)
    } else {
        None
    };
    let data = Dataset::new(table.y.clone(), table.e.clone(), x)?;
    let smoothing = smoothing(args, &mut m, &graph)?;
    let cfg = ModelConfig::new(
        mode,
        smoothing,
        Iterations::new(args.burn_in, args.keep, args.thin),
        args.seed,
    );
    if cfg.iterations.stored() == 0 {
        return Err(CliError::Input("keep/thin leaves no stored draws".into()));
    }
    ensure_dir(&args.out)?;
    info!("running {} chains of {} iterations", args.chains, args.burn_in + args.keep);
    let stores = run_chains(&cfg, &data, &graph, args.chains)?;

    for s in &stores {
        let sub = format!("chain{}", s.chain_id);
        for name in s.write_csv(&args.out.join(&sub), &graph)? {
            m.outputs.push(format!("{sub}/{name}"));
        }
    }
    let acceptance: Vec<_> = stores.iter().map(|s| &s.acceptance).collect();
    m.detail("acceptance", &acceptance)?;
    let chain_seeds: Vec<u64> = stores.iter().map(|s| s.seed).collect();
    m.detail("chain_seeds", &chain_seeds)?;

    let report = boundary_probabilities(&stores, &graph)?;
    m.write_output(&args.out, "boundaries.csv", &report.to_csv())?;
    let d = dic(&stores, &data)?;
    m.write_output(
        &args.out,
        "dic.csv",
        &format!("dic,p_d,d_bar,d_hat\n{},{},{},{}\n", d.dic, d.p_d, d.d_bar, d.d_hat),
    )?;
    m.write_output(&args.out, "gelman_rubin.csv", &gelman_rubin_csv(&stores))?;
    m.write_output(&args.out, "parameters.csv", &parameters_csv(&stores))?;
    m.write_output(&args.out, "risk.csv", &risk_csv(&stores, data.n()))?;
    m.finish(&args.out)
}

/// Study configuration: the simulation settings plus the sampler lengths,
/// all at the top level of one JSON object.
#[derive(Debug, Clone, Serialize)]
pub struct StudyFile {
    #[serde(flatten)]
    pub sim: SimConfig,
    pub burn_in: usize,
    pub keep: usize,
    pub thin: usize,
}

const SAMPLER_KEYS: [(&str, usize); 3] = [("burn_in", 5_000), ("keep", 10_000), ("thin", 5)];

impl StudyFile {
    /// Splits off the sampler keys and hands the rest to [`SimConfig`], which
    /// rejects anything it does not know.
    pub fn parse(text: &str) -> Result<Self, String> {
        let mut map: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(text).map_err(|e| e.to_string())?;
        let mut lengths = [0usize; 3];
        for (slot, (key, default)) in lengths.iter_mut().zip(SAMPLER_KEYS) {
            *slot = match map.remove(key) {
                Some(v) => serde_json::from_value(v).map_err(|e| format!("{key}: {e}"))?,
                None => default,
            };
        }
        let sim = serde_json::from_value(serde_json::Value::Object(map)).map_err(|e| e.to_string())?;
        Ok(StudyFile {
            sim,
            burn_in: lengths[0],
            keep: lengths[1],
            thin: lengths[2],
        })
    }
}

fn read_config<T: for<'de> Deserialize<'de>>(m: &mut RunManifest, path: &Path) -> CliResult<T> {
    let text = m.read_input(path)?;
    serde_json::from_str(&text).map_err(|e| CliError::Input(format!("{}: {e}", path.display())))
}

pub fn simulate(args: &ConfigArgs) -> CliResult<()> {
    let mut m = RunManifest::start("simulate", args, None)?;
    let config: SimConfig = read_config(&mut m, &args.config)?;
    m.seed = Some(config.seed);
    m.config = serde_json::to_value(&config).map_err(|e| CliError::Input(e.to_string()))?;
    let setup = SimSetup::new(config)?;
    ensure_dir(&args.out)?;
    m.write_output(&args.out, "adjacency.txt", &setup.graph.to_adjacency_string())?;
    m.detail("range", &setup.range)?;
    m.detail("boundary_count", &setup.boundaries.iter().filter(|&&b| b).count())?;
    for i in 0..setup.config.replicates {
        let data = setup.replicate(i)?;
        for (name, body) in io::replicate_files(&data, &setup.graph) {
            m.write_output(&args.out, &format!("replicate{i:03}/{name}"), &body)?;
        }
    }
    m.finish(&args.out)
}

pub fn study(args: &ConfigArgs) -> CliResult<()> {
    let mut m = RunManifest::start("study", args, None)?;
    let file = StudyFile::parse(&m.read_input(&args.config)?)
        .map_err(|e| CliError::Input(format!("{}: {e}", args.config.display())))?;
    m.seed = Some(file.sim.seed);
    m.config = serde_json::to_value(&file).map_err(|e| CliError::Input(e.to_string()))?;
    let mcmc = StudyMcmc {
        burn_in: file.burn_in,
        keep: file.keep,
        thin: file.thin,
    };
    if mcmc.thin == 0 || mcmc.keep / mcmc.thin == 0 {
        return Err(CliError::Input("keep/thin leaves no stored draws".into()));
    }
    ensure_dir(&args.out)?;
    let report = run_study(file.sim, mcmc)?;
    m.write_output(&args.out, "report.txt", &report.to_text())?;
    m.write_output(&args.out, "report.csv", &report.to_csv())?;
    let json = serde_json::to_string_pretty(&report).map_err(|e| CliError::Numerical(e.to_string()))?;
    m.write_output(&args.out, "report.json", &(json + "\n"))?;
    m.finish(&args.out)
}
