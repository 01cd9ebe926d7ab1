use crate::common::parse_pair;
use crate::error::CliError;
use crate::settings::Settings;
use crate::GenDataArgs;
use gatelrp::zoo::{gen_dataset, CarColor, SceneConfig};

pub fn gen_data(settings: &Settings, args: GenDataArgs) -> Result<(), CliError> {
    let n: usize = settings.require(args.n, "n")?;
    let seed = settings.seed()?;
    let out = settings.out()?;
    let mut config = SceneConfig::default();
    if let Some(size) = settings.pick(args.size, "size")? {
        config.size = size;
    }
    if let Some(cars) = settings.pick(args.cars, "cars")? {
        config.cars = parse_pair(&cars, "--cars")?;
    }
    if let Some(palette) = settings.pick(args.palette, "palette")? {
        config.palette = crate::common::split_list(&palette)
            .iter()
            .map(|c| CarColor::parse(c).ok_or_else(|| CliError::Usage(format!("unknown car color `{c}`"))))
            .collect::<Result<_, _>>()?;
    }
    let manifest = gen_dataset(&config, n, seed, &out)?;
    println!("wrote {} scenes to {}", manifest.n, out.display());
    Ok(())
}
