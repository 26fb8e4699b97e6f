//! `ncurve gen` — write a toy dataset as JSONL plus a config echo that can
//! regenerate it.

use std::path::PathBuf;

use clap::Args;
use ncurve::{
    gen_toy1, gen_toy2, gen_toy3, gen_toy4, gen_toy5, save_jsonl, DatasetMeta, NCurveError,
    Result, SequenceDataset, Toy1Config, Toy2Config, Toy3Config, Toy4Config,
};

use crate::common::{write_canonical_file, Globals};

#[derive(Args)]
pub struct GenArgs {
    /// Toy dataset name: toy1, toy2, toy3, toy4, or toy5 (optional with --config)
    pub toy: Option<String>,

    /// Config JSON from a previous run ({"name", "seed", "params"}); flags override it
    #[arg(long)]
    pub config: Option<PathBuf>,

    /// Number of sequences (overrides the toy's default)
    #[arg(long)]
    pub m: Option<usize>,

    /// toy3 only: re-draw the arc choice at every step instead of per sequence
    #[arg(long)]
    pub unstructured: bool,
}

fn load_meta(path: &PathBuf) -> Result<DatasetMeta> {
    let text = std::fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| NCurveError::Parse {
        path: path.clone(),
        line: e.line(),
        msg: e.to_string(),
    })
}

fn params_config<T: serde::de::DeserializeOwned>(meta: &DatasetMeta) -> Result<T> {
    serde_json::from_value(meta.params.clone()).map_err(|e| NCurveError::Invalid {
        what: "generator config",
        msg: format!("params do not fit generator '{}': {e}", meta.name),
    })
}

pub fn run(globals: &Globals, args: &GenArgs) -> Result<()> {
    let meta = match &args.config {
        Some(path) => Some(load_meta(path)?),
        None => None,
    };
    let name = match (&args.toy, &meta) {
        (Some(t), Some(m)) if *t != m.name => {
            return Err(NCurveError::Invalid {
                what: "generator config",
                msg: format!("config is for '{}' but '{t}' was requested", m.name),
            });
        }
        (Some(t), _) => t.clone(),
        (None, Some(m)) => m.name.clone(),
        (None, None) => {
            return Err(NCurveError::Invalid {
                what: "gen arguments",
                msg: "name a toy dataset (toy1..toy5) or pass --config".into(),
            });
        }
    };
    if args.unstructured && name != "toy3" {
        return Err(NCurveError::Invalid {
            what: "gen arguments",
            msg: format!("--unstructured only applies to toy3, not {name}"),
        });
    }

    let ds: SequenceDataset = match name.as_str() {
        "toy1" => {
            let mut cfg: Toy1Config = match &meta {
                Some(m) => {
                    let mut c: Toy1Config = params_config(m)?;
                    c.seed = m.seed;
                    c
                }
                None => Toy1Config::default(),
            };
            cfg.seed = globals.seed_or(cfg.seed);
            if let Some(m) = args.m {
                cfg.m = m;
            }
            gen_toy1(&cfg)?
        }
        "toy2" => {
            let mut cfg: Toy2Config = match &meta {
                Some(m) => {
                    let mut c: Toy2Config = params_config(m)?;
                    c.seed = m.seed;
                    c
                }
                None => Toy2Config::default(),
            };
            cfg.seed = globals.seed_or(cfg.seed);
            if let Some(m) = args.m {
                cfg.m = m;
            }
            gen_toy2(&cfg)?
        }
        "toy3" => {
            let mut cfg: Toy3Config = match &meta {
                Some(m) => {
                    let mut c: Toy3Config = params_config(m)?;
                    c.seed = m.seed;
                    c
                }
                None => Toy3Config::default(),
            };
            cfg.seed = globals.seed_or(cfg.seed);
            if let Some(m) = args.m {
                cfg.m = m;
            }
            if args.unstructured {
                cfg.structured = false;
            }
            gen_toy3(&cfg)?
        }
        "toy4" => {
            let mut cfg: Toy4Config = match &meta {
                Some(m) => {
                    let mut c: Toy4Config = params_config(m)?;
                    c.seed = m.seed;
                    c
                }
                None => Toy4Config::default(),
            };
            cfg.seed = globals.seed_or(cfg.seed);
            if let Some(m) = args.m {
                cfg.m = m;
            }
            gen_toy4(&cfg)?.1
        }
        "toy5" => {
            let mut cfg: Toy3Config = match &meta {
                Some(m) => {
                    let mut c: Toy3Config = params_config(m)?;
                    c.seed = m.seed;
                    c
                }
                None => Toy3Config { seed: 105, ..Toy3Config::default() },
            };
            cfg.seed = globals.seed_or(cfg.seed);
            if let Some(m) = args.m {
                cfg.m = m;
            }
            gen_toy5(&cfg)?
        }
        other => {
            return Err(NCurveError::Invalid {
                what: "toy name",
                msg: format!("unknown toy dataset '{other}' (expected toy1..toy5)"),
            });
        }
    };

    let dir = globals.out_or(".");
    std::fs::create_dir_all(&dir)?;
    let data_path = dir.join(format!("{name}.jsonl"));
    let config_path = dir.join(format!("{name}.config.json"));
    save_jsonl(&ds, &data_path)?;
    write_canonical_file(&config_path, &ds.meta)?;
    globals.note(format_args!(
        "wrote {}: M={} n={} d={}",
        data_path.display(),
        ds.m(),
        ds.n(),
        ds.d()
    ));
    globals.note(format_args!("wrote {}", config_path.display()));
    Ok(())
}
