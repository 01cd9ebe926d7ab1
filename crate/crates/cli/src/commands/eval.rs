use crate::common::{create_dir, load_graph, require_dir, split_list, write_json, ExplainContext};
use crate::error::CliError;
use crate::settings::Settings;
use crate::EvalArgs;
use gatelrp::graph::Graph;
use gatelrp::perturb::{run_benchmark, BenchConfig, BenchReport, ScoreMethod};
use gatelrp::render::render_bar_chart;
use gatelrp::zoo::Dataset;
use serde::Serialize;
use std::path::PathBuf;

#[derive(Serialize)]
struct EvalArtifact<'a> {
    model: &'a PathBuf,
    data: &'a PathBuf,
    random_seed: u64,
    sample_seed: u64,
    #[serde(flatten)]
    report: &'a BenchReport,
}

/// Up to three convolutions feeding the head's classifier, in input order.
fn default_layers(graph: &Graph, head: &str) -> Result<Vec<String>, CliError> {
    let convs = graph.convs_before(graph.head(head).map_err(CliError::usage)?);
    let hidden: Vec<String> = convs
        .iter()
        .skip(1)
        .take(3)
        .rev()
        .map(|&i| graph.node(i).id.clone())
        .collect();
    if hidden.is_empty() {
        return Err(CliError::Usage(format!(
            "head `{head}` has no hidden conv layer; pass --layers"
        )));
    }
    Ok(hidden)
}

pub fn eval_perturb(settings: &Settings, args: EvalArgs) -> Result<(), CliError> {
    let out = settings.out()?;
    let seed = settings.seed()?;
    let model_dir: PathBuf = settings.require(args.model, "model")?;
    let data_dir: PathBuf = settings.require(args.data, "data")?;
    let n: usize = settings.require(args.n, "n")?;
    let sample_seed = settings.or(args.sample_seed, "sample-seed", 0)?;
    let methods = settings
        .pick(args.methods, "methods")?
        .map(|m| split_list(&m))
        .unwrap_or_else(|| ScoreMethod::NAMES.iter().map(|s| s.to_string()).collect());
    let methods: Vec<ScoreMethod> = methods
        .iter()
        .map(|m| ScoreMethod::parse(m, seed))
        .collect::<Result<_, _>>()?;

    let graph = load_graph(&model_dir)?;
    let ctx = ExplainContext::resolve(
        &graph,
        settings.pick(args.head, "head")?,
        settings.pick(args.class, "class")?,
    )?;
    let layers = match settings.pick(args.layers, "layers")? {
        Some(l) => split_list(&l),
        None => default_layers(&graph, &ctx.head)?,
    };
    require_dir(&data_dir, "dataset")?;
    let data = Dataset::load(&data_dir)?;
    let config = BenchConfig {
        layers,
        methods,
        n,
        seed: sample_seed,
        target: ctx.bench_target(&graph)?,
    };
    let report = run_benchmark(&graph, &data.scenes, &config)?;

    create_dir(&out)?;
    write_json(
        &out.join("bench_report.json"),
        &EvalArtifact {
            model: &model_dir,
            data: &data_dir,
            random_seed: seed,
            sample_seed,
            report: &report,
        },
    )?;
    let csv = out.join("curves.csv");
    std::fs::write(&csv, report.curves_csv()).map_err(|e| CliError::Data(format!("{}: {e}", csv.display())))?;
    // one group of AOC bars per layer, then one group of AUC bars per layer
    let mut groups = Vec::new();
    for pick in [
        |r: &gatelrp::perturb::BenchRow| r.mean_aoc,
        |r: &gatelrp::perturb::BenchRow| r.mean_auc,
    ] {
        for layer in &report.layers {
            groups.push(
                report
                    .methods
                    .iter()
                    .map(|m| report.row(m, layer).map_or(f64::NAN, pick))
                    .collect::<Vec<f64>>(),
            );
        }
    }
    let chart = out.join("bench_chart.png");
    render_bar_chart(&groups, &chart).map_err(|e| CliError::Data(format!("{}: {e}", chart.display())))?;
    for m in &report.summary {
        println!("{:<10} AOC {:>12.4}  AUC {:>12.4}", m.method, m.mean_aoc, m.mean_auc);
    }
    Ok(())
}
