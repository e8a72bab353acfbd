use std::path::PathBuf;

use remaster_core::colorspace;
use remaster_core::degrade::{apply_recipe, DegradeRecipe, NoiseBank, RECIPE_SCHEMA};
use remaster_core::frames;

use crate::failure::{CliResult, Classify, Failure};

#[derive(clap::Args)]
pub struct Args {
    /// Clean frame sequence.
    #[arg(long)]
    input: PathBuf,
    /// Directory of noise PNGs for the additive film damage.
    #[arg(long)]
    noise_bank: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the drawn recipe to <out>/recipe.json.
    #[arg(long)]
    emit_recipe: bool,
    /// Replay a recipe instead of drawing one (overrides --seed and --size).
    #[arg(long)]
    recipe: Option<PathBuf>,
    /// Side of the square output crop.
    #[arg(long, default_value_t = 256)]
    size: u32,
}

pub fn run(a: Args) -> CliResult {
    let clip = frames::read_sequence(&a.input).data(|| format!("reading frames from {}", a.input.display()))?;
    let recipe = match &a.recipe {
        Some(path) => {
            let text = std::fs::read_to_string(path).data(|| format!("reading {}", path.display()))?;
            let r: DegradeRecipe = serde_json::from_str(&text).data(|| format!("parsing {}", path.display()))?;
            if r.schema != RECIPE_SCHEMA {
                return Err(Failure::Data(anyhow::anyhow!(
                    "recipe schema {} is not supported (expected {RECIPE_SCHEMA})",
                    r.schema
                )));
            }
            if r.noise.len() != clip.len() {
                return Err(Failure::Data(anyhow::anyhow!(
                    "recipe covers {} frames but {} has {}",
                    r.noise.len(),
                    a.input.display(),
                    clip.len()
                )));
            }
            r
        }
        None => {
            if a.size == 0 {
                return Err(Failure::usage("--size must be positive"));
            }
            DegradeRecipe::draw(a.seed, clip.len(), 0, a.size)
        }
    };
    let bank = match &a.noise_bank {
        Some(dir) => crate::load_bank(dir)?,
        None if recipe.needs_bank() => {
            return Err(Failure::usage(
                "the drawn recipe adds film noise; pass --noise-bank DIR (see `remaster noise-bank`)",
            ))
        }
        None => NoiseBank::default(),
    };
    let sample = apply_recipe(&clip, &[], &bank, &recipe).data(|| "applying the degradation".into())?;
    let grey = colorspace::luma_to_grey(&sample.x);
    frames::write_grey_sequence(&a.out, &grey).data(|| format!("writing {}", a.out.display()))?;
    if a.emit_recipe {
        crate::write_json(&a.out.join("recipe.json"), &recipe)?;
    }
    println!("wrote {} degraded frames to {}", grey.len(), a.out.display());
    Ok(())
}
