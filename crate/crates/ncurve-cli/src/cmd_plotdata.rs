//! `ncurve plotdata` — per-component mean, sigma, and 3-sigma envelope
//! columns on a dense grid, plus optional sampled realizations, as CSV.

use std::io::Write;
use std::path::PathBuf;

use clap::Args;
use ncurve::{rng_from_seed, IndexGrid, ModelFile, Result};

use crate::common::{sibling, Globals};

#[derive(Args)]
pub struct PlotdataArgs {
    /// Model file written by `ncurve fit`
    pub model: PathBuf,

    /// Number of grid points to evaluate on
    #[arg(long, default_value_t = 101)]
    pub grid: usize,

    /// Also draw this many realizations into a sibling _samples file
    #[arg(long, default_value_t = 0)]
    pub samples: usize,

    /// Observation file for conditional models (first sequence is used)
    #[arg(long)]
    pub obs: Option<PathBuf>,
}

pub fn run(globals: &Globals, args: &PlotdataArgs) -> Result<()> {
    let model = ModelFile::load(&args.model)?;
    let grid = IndexGrid::uniform(args.grid)?;
    let mixture = crate::cmd_predict::resolve_mixture(&model, args.obs.as_ref(), globals.quiet)?;
    let d = mixture.dim();

    let out = globals.out_or("plotdata.csv");
    let mut f = std::io::BufWriter::new(std::fs::File::create(&out)?);
    write!(f, "component,t")?;
    for a in 0..d {
        write!(f, ",mean_x{a}")?;
    }
    for a in 0..d {
        write!(f, ",sigma_x{a}")?;
    }
    for a in 0..d {
        write!(f, ",half3_x{a}")?;
    }
    writeln!(f)?;
    for (k, comp) in mixture.components().iter().enumerate() {
        let sigma = comp.envelope(&grid, 1.0)?;
        let band = comp.envelope(&grid, 3.0)?;
        for (one, three) in sigma.iter().zip(&band) {
            write!(f, "{k},{}", one.t)?;
            for v in one.mean.iter() {
                write!(f, ",{v}")?;
            }
            for v in one.half_width.iter() {
                write!(f, ",{v}")?;
            }
            for v in three.half_width.iter() {
                write!(f, ",{v}")?;
            }
            writeln!(f)?;
        }
    }
    f.flush()?;
    globals.note(format_args!("wrote {}", out.display()));

    if args.samples > 0 {
        let samples_path = sibling(&out, "samples.csv");
        let mut rng = rng_from_seed(globals.seed_or(0));
        let mut f = std::io::BufWriter::new(std::fs::File::create(&samples_path)?);
        write!(f, "sample,component,t")?;
        for a in 0..d {
            write!(f, ",x{a}")?;
        }
        writeln!(f)?;
        for s in 0..args.samples {
            let (k, seq) = mixture.sample_realization(&grid, &mut rng)?;
            for (&t, x) in grid.values().iter().zip(&seq) {
                write!(f, "{s},{k},{t}")?;
                for v in x.iter() {
                    write!(f, ",{v}")?;
                }
                writeln!(f)?;
            }
        }
        f.flush()?;
        globals.note(format_args!("wrote {}", samples_path.display()));
    }
    Ok(())
}
