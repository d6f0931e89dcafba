//! The `scc` command line: argument parsing, config resolution and the six
//! commands.

use std::collections::HashMap;
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use crate::config::{BasisSelection, RunConfig};
use crate::curves::{
    build_basis, correct_negatives, fpca_noise_variance, fpca_select_p, fpca_select_p_denoised,
    load_cumulative_cases, to_growth_curves, BasisSet, CurveMatrix,
};
use crate::error::{Error, Result};
use crate::inference::{
    best_lpml, cpo_lpml, fit_h_grid, kmeans_baseline, rand_index, select_p_by_lpml, summarize,
    ClusterSummary, HFit,
};
use crate::model::{Hyperparams, ModelData, Partition};
use crate::rng::stream;
use crate::sampler::{run_mcmc, McmcTrace};
use crate::simgen::{load_labels, write_truth, SimRegions};
use crate::spatial::AdjacencyGraph;

#[derive(Debug, Parser)]
#[command(name = "scc", version, about = "Spatially correlated curve clustering")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    #[command(flatten)]
    pub flags: Flags,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Cumulative case counts to scaled growth-rate curves.
    Preprocess,
    /// Generate a simulated data set with its true partition.
    Simulate,
    /// Run the sampler at one value of h.
    Fit,
    /// Fit a grid of h values and keep the largest LPML.
    SelectH,
    /// Rand index of estimated labels against the truth.
    Evaluate,
    /// Summaries from a saved trace.
    Summarize,
}

/// Flags override the config file.
#[derive(Debug, Default, Args)]
pub struct Flags {
    /// TOML run configuration.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub input: Option<PathBuf>,
    #[arg(long, global = true)]
    pub adjacency: Option<PathBuf>,
    #[arg(long, global = true)]
    pub h: Option<f64>,
    /// Comma-separated h candidates.
    #[arg(long, global = true, value_delimiter = ',')]
    pub h_grid: Option<Vec<f64>>,
    #[arg(long, global = true)]
    pub design: Option<u32>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    #[arg(long, global = true)]
    pub iterations: Option<usize>,
    #[arg(long, global = true)]
    pub burn_in: Option<usize>,
    #[arg(long, global = true)]
    pub out_dir: Option<PathBuf>,
    /// Reference labels for `evaluate`.
    #[arg(long, global = true)]
    pub truth: Option<PathBuf>,
    /// Curves for the k-means baseline in `evaluate`.
    #[arg(long, global = true)]
    pub baseline: Option<PathBuf>,
}

/// Config file (or defaults) with the flags applied, validated.
pub fn resolve_config(flags: &Flags) -> Result<RunConfig> {
    let mut c = match &flags.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(v) = &flags.input {
        c.input = Some(v.clone());
    }
    if let Some(v) = &flags.adjacency {
        c.adjacency = Some(v.clone());
    }
    if let Some(v) = flags.h {
        c.h = v;
    }
    if let Some(v) = &flags.h_grid {
        c.h_grid = v.clone();
    }
    if let Some(v) = flags.design {
        c.simulate.design = Some(v);
    }
    if let Some(v) = flags.seed {
        c.seed = v;
    }
    if let Some(v) = flags.jobs {
        c.jobs = v;
    }
    if let Some(v) = flags.iterations {
        c.mcmc.iterations = v;
    }
    if let Some(v) = flags.burn_in {
        c.mcmc.burn_in = v;
    }
    if let Some(v) = &flags.out_dir {
        c.out_dir = v.clone();
    }
    if let Some(v) = &flags.truth {
        c.evaluate.truth = Some(v.clone());
    }
    if let Some(v) = &flags.baseline {
        c.evaluate.baseline_curves = Some(v.clone());
    }
    // one seed drives everything
    c.mcmc.seed = c.seed;
    c.validate()?;
    Ok(c)
}

pub fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve_config(&cli.flags)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    pool.install(|| match cli.command {
        Command::Preprocess => cmd_preprocess(&cfg),
        Command::Simulate => cmd_simulate(&cfg),
        Command::Fit => cmd_fit(&cfg),
        Command::SelectH => cmd_select_h(&cfg),
        Command::Evaluate => cmd_evaluate(&cfg),
        Command::Summarize => cmd_summarize(&cfg),
    })
}

fn require<'a>(p: &'a Option<PathBuf>, what: &str) -> Result<&'a Path> {
    p.as_deref()
        .ok_or_else(|| Error::Config(format!("missing {what}")))
}

/// Write through a temporary sibling, then rename into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| Error::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    write_atomic(path, s.as_bytes())
}

/// CSV body preceded by a `# config: {...}` comment line.
fn write_csv_with_config(path: &Path, cfg: &RunConfig, body: Vec<u8>) -> Result<()> {
    let mut out = format!("# config: {}\n", serde_json::to_string(&cfg.to_json())?).into_bytes();
    out.extend(body);
    write_atomic(path, &out)
}

fn cmd_preprocess(cfg: &RunConfig) -> Result<()> {
    let input = require(&cfg.input, "--input (cumulative case CSV)")?;
    let window = match (cfg.preprocess.start, cfg.preprocess.end) {
        (Some(s), Some(e)) => Some((s, e)),
        (None, None) => None,
        _ => {
            return Err(Error::Config(
                "preprocess.start and preprocess.end must be given together".into(),
            ))
        }
    };
    let raw = load_cumulative_cases(input, window)?;
    let mut report = Vec::with_capacity(raw.len());
    let fixed: Vec<_> = raw
        .iter()
        .map(|s| {
            let negatives = s.increments().iter().filter(|&&d| d < 0).count();
            report.push(json!({ "region_id": s.region_id, "negative_days_corrected": negatives }));
            correct_negatives(s)
        })
        .collect();
    let curves = to_growth_curves(&fixed)?;
    let mut body = Vec::new();
    curves.write_csv(&mut body)?;
    write_csv_with_config(&cfg.out_dir.join("curves.csv"), cfg, body)?;
    write_json(
        &cfg.out_dir.join("preprocess_report.json"),
        &json!({
            "config": cfg.to_json(),
            "n_regions": curves.n_regions(),
            "n_points": curves.n_points(),
            "regions": report,
        }),
    )?;
    log::info!("wrote {} curves of {} points", curves.n_regions(), curves.n_points());
    Ok(())
}

fn cmd_simulate(cfg: &RunConfig) -> Result<()> {
    let scheme = cfg.simulate.resolve()?;
    let regions = SimRegions::us_states()?;
    let tag = cfg.simulate.design.unwrap_or(0) as u64;
    let mut rng = stream(cfg.seed, "simulate", &[tag]);
    let (curves, truth) = scheme.generate(&regions, &mut rng)?;
    let mut body = Vec::new();
    curves.write_csv(&mut body)?;
    write_csv_with_config(&cfg.out_dir.join("curves.csv"), cfg, body)?;
    let mut body = Vec::new();
    write_truth(&mut body, regions.region_ids(), &truth)?;
    write_csv_with_config(&cfg.out_dir.join("truth.csv"), cfg, body)?;
    let mut body = Vec::new();
    regions.graph.write_csv(&mut body)?;
    write_csv_with_config(&cfg.out_dir.join("adjacency.csv"), cfg, body)?;
    write_json(
        &cfg.out_dir.join("simulation.json"),
        &json!({ "config": cfg.to_json(), "scheme": serde_json::to_value(&scheme)? }),
    )?;
    Ok(())
}

fn load_inputs(cfg: &RunConfig, curves_path: &Path) -> Result<(CurveMatrix, AdjacencyGraph)> {
    let curves = CurveMatrix::load(curves_path)?;
    let adj = require(&cfg.adjacency, "--adjacency")?;
    let graph = AdjacencyGraph::load(adj, Some(curves.region_ids()))?;
    Ok((curves, graph))
}

/// Basis and prior for a run, with a record of how `p` was chosen.
struct ModelSetup {
    basis: BasisSet,
    hyper: Hyperparams,
    selection: Value,
}

fn setup_model(cfg: &RunConfig, curves: &CurveMatrix, graph: &AdjacencyGraph) -> Result<ModelSetup> {
    let b = &cfg.basis;
    let noise = fpca_noise_variance(curves)?;
    let t = curves.n_points();
    let (p, selection) = match (b.p, b.selection) {
        (Some(p), _) => (p, json!({ "method": "fixed", "p": p })),
        (None, BasisSelection::Fpca) => {
            let p = if b.fpca_noise_correction {
                fpca_select_p_denoised(curves, b.fve_threshold)?
            } else {
                fpca_select_p(curves, b.fve_threshold)?
            };
            (p, json!({ "method": "fpca", "p": p, "noise_correction": b.fpca_noise_correction }))
        }
        (None, BasisSelection::Lpml) => {
            let (p, scores) = select_p_by_lpml(
                &b.p_candidates,
                curves,
                graph,
                b.order,
                |basis| cfg.prior.resolve(basis, noise, 0.0),
                &cfg.mcmc,
            )?;
            let table: Vec<Value> =
                scores.iter().map(|(p, l)| json!({ "p": p, "lpml": l })).collect();
            (p, json!({ "method": "lpml", "p": p, "scores": table }))
        }
    };
    let basis = build_basis(p, t, b.order.min(p))?;
    let hyper = cfg.prior.resolve(&basis, noise, cfg.h)?;
    Ok(ModelSetup {
        basis,
        hyper,
        selection,
    })
}

fn trace_header(cfg: &RunConfig, setup: &ModelSetup, h: f64) -> Value {
    json!({
        "config": cfg.to_json(),
        "p": setup.basis.p,
        "order": setup.basis.order,
        "h": h,
        "hyper": Hyperparams { h, ..setup.hyper.clone() },
        "basis_selection": setup.selection,
    })
}

fn summary_json(cfg: &RunConfig, header: &Value, trace: &McmcTrace, s: &ClusterSummary, lpml: f64) -> Value {
    json!({
        "config": cfg.to_json(),
        "model": header,
        "lpml": lpml,
        "acceptance_rate": trace.acceptance_rate,
        "proposal_sd": trace.proposal_sd,
        "n_draws": trace.len(),
        "n_clusters": s.mean_curves.len(),
        "summary": s,
    })
}

fn write_fit_outputs(
    cfg: &RunConfig,
    data: &ModelData,
    header: &Value,
    trace: &McmcTrace,
    lpml: f64,
) -> Result<()> {
    let mut body = Vec::new();
    trace.write_jsonl(&mut body, header)?;
    write_atomic(&cfg.out_dir.join("trace.jsonl"), &body)?;
    let s = summarize(trace, data)?;
    write_summary_files(cfg, data, &summary_json(cfg, header, trace, &s, lpml), &s)
}

fn write_summary_files(cfg: &RunConfig, data: &ModelData, doc: &Value, s: &ClusterSummary) -> Result<()> {
    write_json(&cfg.out_dir.join("summary.json"), doc)?;
    let ids = data.curves.region_ids();
    let mut body = Vec::new();
    write_truth(&mut body, ids, &Partition::from_labels(&s.dahl_labels))?;
    let text = String::from_utf8(body).map_err(|e| Error::Format(e.to_string()))?;
    let text = text.replacen("region_id,true_cluster", "region_id,cluster", 1);
    write_csv_with_config(&cfg.out_dir.join("labels.csv"), cfg, text.into_bytes())?;
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut head = vec!["cluster".to_string()];
    head.extend(data.curves.grid().iter().map(|g| g.to_string()));
    w.write_record(&head)?;
    for (k, c) in s.mean_curves.iter().enumerate() {
        let mut rec = vec![(k + 1).to_string()];
        rec.extend(c.iter().map(|v| v.to_string()));
        w.write_record(&rec)?;
    }
    let body = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    write_csv_with_config(&cfg.out_dir.join("mean_curves.csv"), cfg, body)
}

fn cmd_fit(cfg: &RunConfig) -> Result<()> {
    let (curves, graph) = load_inputs(cfg, require(&cfg.input, "--input (curve CSV)")?)?;
    let setup = setup_model(cfg, &curves, &graph)?;
    let data = ModelData::new(curves, setup.basis.clone(), &graph)?;
    let trace = run_mcmc(&data, &setup.hyper, &cfg.mcmc)?;
    let report = cpo_lpml(&trace, &data, cfg.h)?;
    let header = trace_header(cfg, &setup, cfg.h);
    write_fit_outputs(cfg, &data, &header, &trace, report.lpml)?;
    log::info!("fit at h = {} done, LPML {:.3}", cfg.h, report.lpml);
    Ok(())
}

fn cmd_select_h(cfg: &RunConfig) -> Result<()> {
    let (curves, graph) = load_inputs(cfg, require(&cfg.input, "--input (curve CSV)")?)?;
    let setup = setup_model(cfg, &curves, &graph)?;
    let data = ModelData::new(curves, setup.basis.clone(), &graph)?;
    let results = fit_h_grid(&cfg.h_grid, &data, &setup.hyper, &cfg.mcmc)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["h", "lpml", "status"])?;
    let mut ok: Vec<HFit> = Vec::new();
    let mut failed = Vec::new();
    for (h, r) in cfg.h_grid.iter().zip(results) {
        match r {
            Ok(fit) => {
                w.write_record([h.to_string(), fit.report.lpml.to_string(), "ok".into()])?;
                ok.push(fit);
            }
            Err(e) => {
                log::error!("h = {h}: {e}");
                w.write_record([h.to_string(), String::new(), format!("error: {e}")])?;
                failed.push(*h);
            }
        }
    }
    let body = w.into_inner().map_err(|e| Error::Format(e.to_string()))?;
    write_csv_with_config(&cfg.out_dir.join("lpml.csv"), cfg, body)?;
    if ok.is_empty() {
        return Err(Error::Numeric("every h candidate failed".into()));
    }
    let best = &ok[best_lpml(&ok)];
    let header = trace_header(cfg, &setup, best.h);
    write_fit_outputs(cfg, &data, &header, &best.trace, best.report.lpml)?;
    log::info!("selected h = {} (LPML {:.3})", best.h, best.report.lpml);
    if failed.is_empty() {
        Ok(())
    } else {
        Err(Error::Numeric(format!("fits failed for h in {failed:?}")))
    }
}

/// Region ids in file order from a `region_id,<label>` CSV.
fn label_file_ids(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut rdr = csv::ReaderBuilder::new().comment(Some(b'#')).from_reader(file);
    let mut ids = Vec::new();
    let mut seen = HashMap::new();
    for rec in rdr.records() {
        let id = rec?.get(0).unwrap_or("").to_string();
        if seen.insert(id.clone(), ()).is_some() {
            return Err(Error::Format(format!("region {id} listed twice in {}", path.display())));
        }
        ids.push(id);
    }
    Ok(ids)
}

fn cmd_evaluate(cfg: &RunConfig) -> Result<()> {
    let est_path = require(&cfg.input, "--input (estimated labels)")?;
    let truth_path = require(&cfg.evaluate.truth, "--truth")?;
    let ids = label_file_ids(est_path)?;
    let truth_ids = label_file_ids(truth_path)?;
    if truth_ids.len() != ids.len() {
        return Err(Error::Dimension(format!(
            "{} estimated labels but {} true labels",
            ids.len(),
            truth_ids.len()
        )));
    }
    let est = load_labels(est_path, &ids)?;
    let truth = load_labels(truth_path, &ids)?;
    let ri = rand_index(&est, &truth)?;
    let mut doc = json!({
        "config": cfg.to_json(),
        "n_regions": ids.len(),
        "n_clusters_estimated": est.n_clusters(),
        "n_clusters_truth": truth.n_clusters(),
        "rand_index": ri,
    });
    if let Some(path) = &cfg.evaluate.baseline_curves {
        let curves = CurveMatrix::load(path)?;
        let order: Vec<String> = curves.region_ids().to_vec();
        let truth_c = load_labels(truth_path, &order)?;
        let km = kmeans_baseline(&curves, &cfg.evaluate.k_range, cfg.seed)?;
        doc["kmeans"] = json!({
            "k": km.k,
            "calinski_harabasz": km.calinski_harabasz,
            "rand_index": rand_index(&km.partition, &truth_c)?,
            "warning": km.warning,
        });
    }
    write_json(&cfg.out_dir.join("metrics.json"), &doc)
}

fn cmd_summarize(cfg: &RunConfig) -> Result<()> {
    let path = require(&cfg.input, "--input (trace JSONL)")?;
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let (trace, header) = McmcTrace::read_jsonl(BufReader::new(file))?;
    let field = |k: &str| {
        header
            .get(k)
            .cloned()
            .ok_or_else(|| Error::Format(format!("trace header lacks `{k}`")))
    };
    let run: RunConfig = serde_json::from_value(field("config")?)?;
    let p: usize = serde_json::from_value(field("p")?)?;
    let order: usize = serde_json::from_value(field("order")?)?;
    let curves_path = require(&run.input, "curve path in the trace header")?;
    let (curves, graph) = load_inputs(&run, curves_path)?;
    let basis = build_basis(p, curves.n_points(), order)?;
    let data = ModelData::new(curves, basis, &graph)?;
    let lpml = cpo_lpml(&trace, &data, serde_json::from_value(field("h")?)?)?.lpml;
    let s = summarize(&trace, &data)?;
    let model = header.clone();
    write_summary_files(cfg, &data, &summary_json(cfg, &model, &trace, &s, lpml), &s)
}
