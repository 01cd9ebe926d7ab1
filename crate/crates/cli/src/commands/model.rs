use crate::common::{create_dir, load_graph, require_dir, write_json};
use crate::error::CliError;
use crate::settings::Settings;
use crate::{BuildModelArgs, TrainArgs};
use gatelrp::graph::save_model;
use gatelrp::zoo::{train_sgd, Architecture, Dataset, ToyModelSpec, TrainConfig, TrainTask, WeightMode, ZooError};
use serde::Serialize;
use std::path::PathBuf;

pub fn build_model(settings: &Settings, args: BuildModelArgs) -> Result<(), CliError> {
    let out = settings.out()?;
    let arch_name: String = settings.require(args.arch, "arch")?;
    let arch = Architecture::parse(&arch_name).ok_or_else(|| {
        CliError::Usage(format!(
            "unknown architecture `{arch_name}`; expected toy-pid or toy-det"
        ))
    })?;
    let weights = match settings
        .or(args.weights, "weights", "handcrafted".to_string())?
        .as_str()
    {
        "handcrafted" => WeightMode::Handcrafted,
        "random" => WeightMode::Random { seed: settings.seed()? },
        other => {
            return Err(CliError::Usage(format!(
                "unknown weight mode `{other}`; expected handcrafted or random"
            )))
        }
    };
    let mut spec = match arch {
        Architecture::ToyPid => ToyModelSpec::toy_pid(weights),
        Architecture::ToyDet => ToyModelSpec::toy_det(weights),
    };
    spec.width = settings.or(args.width, "width", spec.width)?;
    spec.head_width = settings.or(args.head_width, "head-width", spec.head_width)?;
    spec.image_size = settings.or(args.image_size, "image-size", spec.image_size)?;
    if settings.flag(args.no_bias, "no-bias")? {
        spec = spec.without_bias();
    }
    let graph = spec.build()?;
    create_dir(&out)?;
    save_model(&graph, &out).map_err(CliError::data)?;
    write_json(&out.join("spec.json"), &spec)?;
    println!(
        "wrote {} model ({} nodes) to {}",
        arch.as_str(),
        graph.len(),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct TrainArtifact<'a> {
    model: &'a PathBuf,
    data: &'a PathBuf,
    samples: usize,
    report: &'a gatelrp::zoo::TrainReport,
}

pub fn train(settings: &Settings, args: TrainArgs) -> Result<(), CliError> {
    let out = settings.out()?;
    let seed = settings.seed()?;
    let model_dir: PathBuf = settings.require(args.model, "model")?;
    let data_dir: PathBuf = settings.require(args.data, "data")?;
    let epochs: usize = settings.require(args.epochs, "epochs")?;
    let lr: f64 = settings.require(args.lr, "lr")?;
    require_dir(&data_dir, "dataset")?;
    let mut graph = load_graph(&model_dir)?;
    let ids = graph.output_ids();
    let task = if ids.contains(&"seg") {
        TrainTask::Segmentation
    } else if ids.contains(&"obj") && ids.contains(&"cls") {
        TrainTask::Detection
    } else {
        return Err(CliError::Usage(format!(
            "cannot infer a training task from heads {ids:?}"
        )));
    };
    let data = Dataset::load(&data_dir)?;
    let mut config = TrainConfig::new(task, epochs, lr, seed);
    config.batch_size = settings.or(args.batch, "batch", config.batch_size)?;
    let report = match train_sgd(&mut graph, &data.scenes, &config) {
        Ok(r) => r,
        Err(ZooError::Diverged { epoch, losses }) => {
            create_dir(&out)?;
            let report = gatelrp::zoo::TrainReport { config, losses };
            write_json(
                &out.join("train_report.json"),
                &TrainArtifact {
                    model: &model_dir,
                    data: &data_dir,
                    samples: data.len(),
                    report: &report,
                },
            )?;
            return Err(CliError::Data(format!(
                "training diverged in epoch {epoch}; loss history in {}",
                out.join("train_report.json").display()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    create_dir(&out)?;
    save_model(&graph, &out).map_err(CliError::data)?;
    write_json(
        &out.join("train_report.json"),
        &TrainArtifact {
            model: &model_dir,
            data: &data_dir,
            samples: data.len(),
            report: &report,
        },
    )?;
    if let Some(last) = report.losses.last() {
        println!("trained {epochs} epochs, final loss {last:.6}");
    }
    Ok(())
}
