use crate::common::{create_dir, load_graph, load_image, parse_rules, require_dir, write_json, ExplainContext};
use crate::error::CliError;
use crate::settings::Settings;
use crate::{ProtoAssignArgs, ProtoFitArgs};
use gatelrp::crp::{
    concept_record, relmax_references, ConceptRecord, ConceptVector, ReferenceSet, DEFAULT_CROP, DEFAULT_K,
};
use gatelrp::graph::{Graph, Region, TargetMode, TargetSpec};
use gatelrp::lrp::{lrp_backward, RuleAssignment};
use gatelrp::pcx::{AssignmentRecord, ConceptMatrix, GmmConfig, PrototypeStore};
use gatelrp::tensor::Tensor;
use gatelrp::zoo::Dataset;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use std::path::PathBuf;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FitEcho {
    model: PathBuf,
    data: PathBuf,
    layer: String,
    k: usize,
    q: f64,
    seed: u64,
    head: String,
    class: usize,
    rules: RuleAssignment,
    top_m: usize,
    refs: usize,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct PrototypeArtifact {
    config: FitEcho,
    store: PrototypeStore,
}

#[derive(Serialize)]
struct ConceptsArtifact {
    layer: String,
    vectors: Vec<ConceptVector>,
    references: Vec<ReferenceSet>,
}

#[derive(Serialize)]
struct AssignmentArtifact {
    store: PathBuf,
    model: PathBuf,
    sample: String,
    layer: String,
    head: String,
    class: usize,
    #[serde(flatten)]
    record: AssignmentRecord,
}

/// Concept vector of one image at `layer`, or `None` when a segmentation
/// target has an empty predicted region.
fn sample_vector(
    graph: &Graph,
    ctx: &ExplainContext,
    image: &Tensor,
    layer: &str,
    sample_id: usize,
    rules: &RuleAssignment,
) -> Result<Option<ConceptRecord>, CliError> {
    let tape = graph.forward(image).map_err(CliError::data)?;
    let target = match ctx.bench_target(graph)? {
        gatelrp::perturb::BenchTarget::Segmentation { head, class } => {
            let t = TargetSpec::segmentation(&head, class, Region::Predicted)
                .resolve(graph, &tape)
                .map_err(CliError::data)?;
            match &t.mode {
                TargetMode::Segmentation {
                    region: Region::Mask(m),
                    ..
                } if !m.iter().any(|&v| v) => return Ok(None),
                _ => t,
            }
        }
        peak => peak.resolve(graph, &tape).map_err(CliError::data)?,
    };
    let head = graph.head(&target.head).map_err(CliError::data)?;
    let (_, seed) = target.select_scalar(graph, &tape).map_err(CliError::data)?;
    let (rel, _) = lrp_backward(graph, &tape, head, &seed, rules)?;
    Ok(Some(concept_record(&rel, layer, sample_id, Some(target))?))
}

fn default_layer(graph: &Graph, head: &str) -> Result<String, CliError> {
    let convs = graph.convs_before(graph.head(head).map_err(CliError::usage)?);
    let pick = convs
        .get(1)
        .or(convs.first())
        .ok_or_else(|| CliError::usage("head has no conv layer"))?;
    Ok(graph.node(*pick).id.clone())
}

pub fn fit(settings: &Settings, args: ProtoFitArgs) -> Result<(), CliError> {
    let out = settings.out()?;
    let seed = settings.seed()?;
    let model_dir: PathBuf = settings.require(args.model, "model")?;
    let data_dir: PathBuf = settings.require(args.data, "data")?;
    let k: usize = settings.require(args.k, "k")?;
    let q = settings.or(args.q, "q", 5.0)?;
    let top_m = settings.or(args.top_m, "top-m", 5)?;
    let refs = settings.or(args.refs, "refs", DEFAULT_K)?;
    let rules = parse_rules(&settings.or(args.rules, "rules", "default".to_string())?)?;
    if k == 0 {
        return Err(CliError::usage("--k must be at least 1"));
    }
    if !(q > 0.0 && q <= 50.0) {
        return Err(CliError::Usage(format!("--q must lie in (0, 50], got {q}")));
    }
    let graph = load_graph(&model_dir)?;
    let ctx = ExplainContext::resolve(
        &graph,
        settings.pick(args.head, "head")?,
        settings.pick(args.class, "class")?,
    )?;
    let layer = match settings.pick(args.layer, "layer")? {
        Some(l) => l,
        None => default_layer(&graph, &ctx.head)?,
    };
    graph
        .index_of(&layer)
        .map_err(|_| CliError::Usage(format!("unknown layer `{layer}`")))?;
    require_dir(&data_dir, "dataset")?;
    let data = Dataset::load(&data_dir)?;
    if k > data.len() {
        return Err(CliError::Usage(format!(
            "K = {k} exceeds the {} samples in the dataset",
            data.len()
        )));
    }

    let records: Vec<Option<ConceptRecord>> = data
        .scenes
        .par_iter()
        .enumerate()
        .map(|(i, s)| sample_vector(&graph, &ctx, &s.image, &layer, i, &rules))
        .collect::<Result<_, _>>()?;
    let mut empty = Vec::new();
    let mut pairs = Vec::new();
    for (i, r) in records.iter().enumerate() {
        match r {
            Some(r) => pairs.push((i, r.vector.values.clone())),
            None => empty.push(i),
        }
    }
    let mut matrix = ConceptMatrix::from_vectors(&layer, &ctx.encode(), &pairs);
    matrix.excluded.extend(empty);
    matrix.excluded.sort_unstable();
    if k > matrix.len() {
        return Err(CliError::Usage(format!(
            "K = {k} exceeds the {} samples with a non-zero concept vector",
            matrix.len()
        )));
    }
    let store = PrototypeStore::fit(&matrix, GmmConfig::new(k, seed), q, top_m)?;

    let kept: Vec<ConceptRecord> = records.into_iter().flatten().collect();
    let input = graph.input_shape();
    let channels = kept.first().map_or(0, |r| r.vector.values.len());
    let references = (0..channels)
        .map(|c| relmax_references(&kept, &layer, c, refs, (input.h, input.w), DEFAULT_CROP))
        .collect::<Result<Vec<_>, _>>()?;

    create_dir(&out)?;
    let coverage: Vec<String> = store.summaries.iter().map(|s| format!("{:.1}%", s.coverage)).collect();
    write_json(
        &out.join("prototypes.json"),
        &PrototypeArtifact {
            config: FitEcho {
                model: model_dir,
                data: data_dir,
                layer: layer.clone(),
                k,
                q,
                seed,
                head: ctx.head.clone(),
                class: ctx.class,
                rules,
                top_m,
                refs,
            },
            store,
        },
    )?;
    write_json(
        &out.join("concepts.json"),
        &ConceptsArtifact {
            layer,
            vectors: kept.into_iter().map(|r| r.vector).collect(),
            references,
        },
    )?;
    println!("fitted {k} prototypes, coverage {}", coverage.join(" "));
    Ok(())
}

pub fn assign(settings: &Settings, args: ProtoAssignArgs) -> Result<(), CliError> {
    let out = settings.out()?;
    let store_path: PathBuf = settings.require(args.store, "store")?;
    if !store_path.exists() {
        return Err(CliError::Usage(format!(
            "store {} does not exist",
            store_path.display()
        )));
    }
    let text =
        std::fs::read_to_string(&store_path).map_err(|e| CliError::Data(format!("{}: {e}", store_path.display())))?;
    let artifact: PrototypeArtifact =
        serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", store_path.display())))?;
    let model_dir = settings.or(args.model, "model", artifact.config.model.clone())?;
    let rules = match settings.pick(args.rules, "rules")? {
        Some(r) => parse_rules(&r)?,
        None => artifact.config.rules.clone(),
    };
    let graph = load_graph(&model_dir)?;
    let ctx = ExplainContext::decode(&artifact.store.context)?;

    let (image, sample, sample_id) = match (settings.pick(args.image, "image")?, settings.pick(args.data, "data")?) {
        (Some(p), None) => {
            let img = load_image(&p)?;
            (img, p.display().to_string(), 0)
        }
        (None, Some(d)) => {
            let index: usize = settings.require(args.index, "index")?;
            require_dir(&d, "dataset")?;
            let mut data = Dataset::load(&d)?;
            if index >= data.len() {
                return Err(CliError::Usage(format!(
                    "--index {index} out of range for {} samples",
                    data.len()
                )));
            }
            (
                data.scenes.swap_remove(index).image,
                format!("{}#{index}", d.display()),
                index,
            )
        }
        _ => return Err(CliError::usage("give exactly one of --image or --data with --index")),
    };
    let layer = artifact.store.layer_id.clone();
    let record = sample_vector(&graph, &ctx, &image, &layer, sample_id, &rules)?
        .ok_or_else(|| CliError::Data(format!("empty predicted region for class {} on {sample}", ctx.class)))?;
    let assessed = artifact.store.assess(&record.vector.values, 10)?;
    create_dir(&out)?;
    let msg = format!(
        "prototype {} (log-likelihood {:.3}, percentile {:.1}{})",
        assessed.component,
        assessed.log_likelihood,
        assessed.percentile,
        if assessed.outlier { ", outlier" } else { "" }
    );
    write_json(
        &out.join("assignment.json"),
        &AssignmentArtifact {
            store: store_path,
            model: model_dir,
            sample,
            layer,
            head: ctx.head,
            class: ctx.class,
            record: assessed,
        },
    )?;
    println!("{msg}");
    Ok(())
}
