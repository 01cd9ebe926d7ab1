use crate::common::{
    create_dir, load_graph, load_image, parse_pair, parse_rules, split_list, write_json, ExplainContext,
};
use crate::error::CliError;
use crate::settings::Settings;
use crate::ExplainArgs;
use gatelrp::crp::{concept_record, conditional_heatmap, top_concepts};
use gatelrp::graph::TargetSpec;
use gatelrp::lrp::{lrp_backward, NodeLedger, RuleAssignment};
use gatelrp::render::render_heatmap;
use gatelrp::tensor::Tensor;
use serde::Serialize;
use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

#[derive(Serialize)]
struct ConfigEcho {
    model: PathBuf,
    image: PathBuf,
    sample: usize,
    head: String,
    class: usize,
    cell: Option<(usize, usize)>,
    mask: Option<PathBuf>,
    rules: RuleAssignment,
    layers: Vec<String>,
    top_m: usize,
    config_file: BTreeMap<String, String>,
}

#[derive(Serialize)]
struct LedgerSummary {
    explained_scalar: f64,
    seed_total: f64,
    input_total: f64,
    absorbed_total: f64,
    global_residual: f64,
    relative_global_residual: f64,
    input_conservation_error: f64,
    max_node_residual: f64,
    violations: Vec<String>,
    nodes: Vec<NodeLedger>,
}

#[derive(Serialize)]
struct ConceptHeatmap {
    channel: usize,
    relevance: f64,
    file: String,
}

#[derive(Serialize)]
struct LayerExplanation {
    layer: String,
    concept_vector: Vec<f64>,
    peaks: Vec<(usize, usize)>,
    top_concepts: Vec<ConceptHeatmap>,
}

#[derive(Serialize)]
struct Explanation {
    config: ConfigEcho,
    seed: Option<u64>,
    target: TargetSummary,
    explained_scalar: f64,
    ledger: LedgerSummary,
    heatmap_full: String,
    layers: Vec<LayerExplanation>,
}

/// The target without its (large) resolved mask.
#[derive(Serialize)]
struct TargetSummary {
    head: String,
    class: usize,
    cell: Option<(usize, usize)>,
    region_pixels: Option<usize>,
}

impl TargetSummary {
    fn of(t: &TargetSpec) -> Self {
        use gatelrp::graph::{Region, TargetMode};
        match &t.mode {
            TargetMode::Segmentation { class, region } => TargetSummary {
                head: t.head.clone(),
                class: *class,
                cell: None,
                region_pixels: match region {
                    Region::Mask(m) => Some(m.iter().filter(|&&v| v).count()),
                    Region::Predicted => None,
                },
            },
            TargetMode::Detection { row, col, class } => TargetSummary {
                head: t.head.clone(),
                class: *class,
                cell: Some((*row, *col)),
                region_pixels: None,
            },
        }
    }
}

fn save_map(map: &Tensor, path: &Path) -> Result<(), CliError> {
    let s = map.shape();
    render_heatmap(map.data(), s.h, s.w, path).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

/// File-name-safe form of a node id.
fn slug(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '-' { c } else { '_' })
        .collect()
}

pub fn explain(settings: &Settings, args: ExplainArgs) -> Result<(), CliError> {
    let out = settings.out()?;
    let model_dir: PathBuf = settings.require(args.model, "model")?;
    let image_path: PathBuf = settings.require(args.image, "image")?;
    let sample = settings.or(args.sample, "sample", 0)?;
    let top_m = settings.or(args.top_m, "top-m", 3)?;
    let rules = parse_rules(&settings.or(args.rules, "rules", "default".to_string())?)?;
    let cell = settings
        .pick(args.cell, "cell")?
        .map(|c| parse_pair(&c, "--cell"))
        .transpose()?;
    let mask: Option<PathBuf> = settings.pick(args.mask, "mask")?;

    let graph = load_graph(&model_dir)?;
    let ctx = ExplainContext::resolve(
        &graph,
        settings.pick(args.head, "head")?,
        settings.pick(args.class, "class")?,
    )?;
    let head_idx = graph.head(&ctx.head).map_err(CliError::usage)?;
    let layers = match settings.pick(args.layers, "layers")? {
        Some(l) => split_list(&l),
        None => {
            let convs = graph.convs_before(head_idx);
            let pick = convs
                .get(1)
                .or(convs.first())
                .ok_or_else(|| CliError::usage("head has no conv layer"))?;
            vec![graph.node(*pick).id.clone()]
        }
    };
    for l in &layers {
        graph
            .index_of(l)
            .map_err(|_| CliError::Usage(format!("unknown layer `{l}`")))?;
    }

    let image = load_image(&image_path)?;
    let tape = graph.forward(&image).map_err(CliError::data)?;
    let target = ctx.target(&graph, &tape, cell, mask.as_deref())?;
    let (scalar, seed) = target.select_scalar(&graph, &tape).map_err(CliError::data)?;
    let (rel, report) = lrp_backward(&graph, &tape, head_idx, &seed, &rules)?;

    create_dir(&out)?;
    save_map(&rel.input_relevance().sum_channels(), &out.join("heatmap_full.png"))?;

    let mut layer_out = Vec::new();
    for layer in &layers {
        let record = concept_record(&rel, layer, sample, Some(target.clone()))?;
        let mut heatmaps = Vec::new();
        for ch in top_concepts(&record.vector.values, top_m) {
            let map = conditional_heatmap(&graph, &tape, &rel, layer, &[ch], &rules)?;
            let file = format!("heatmap_{sample}_{}_{ch}.png", slug(layer));
            save_map(&map, &out.join(&file))?;
            heatmaps.push(ConceptHeatmap {
                channel: ch,
                relevance: record.vector.values[ch],
                file,
            });
        }
        layer_out.push(LayerExplanation {
            layer: layer.clone(),
            concept_vector: record.vector.values,
            peaks: record.peaks,
            top_concepts: heatmaps,
        });
    }

    let ledger = LedgerSummary {
        explained_scalar: scalar,
        seed_total: report.seed_total,
        input_total: report.input_total,
        absorbed_total: report.absorbed_total,
        global_residual: report.global_residual(),
        relative_global_residual: report.relative_global_residual(),
        input_conservation_error: report.input_conservation_error(),
        max_node_residual: report.nodes.iter().fold(0.0, |m, n| m.max(n.residual.abs())),
        violations: report.violations().iter().map(|n| n.id.clone()).collect(),
        nodes: report.nodes.clone(),
    };
    let violations = ledger.violations.len();
    let explanation = Explanation {
        config: ConfigEcho {
            model: model_dir,
            image: image_path,
            sample,
            head: ctx.head.clone(),
            class: ctx.class,
            cell,
            mask,
            rules,
            layers,
            top_m,
            config_file: settings.file_entries().clone(),
        },
        seed: settings.seed,
        target: TargetSummary::of(&target),
        explained_scalar: scalar,
        ledger,
        heatmap_full: "heatmap_full.png".into(),
        layers: layer_out,
    };
    write_json(&out.join("explanation.json"), &explanation)?;
    println!(
        "explained {} class {} = {scalar:.6}; ledger violations: {violations}",
        ctx.head, ctx.class
    );
    Ok(())
}
