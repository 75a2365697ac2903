//! Command-line front end: `fit`, `ungroup`, `predict`, `simulate`.

use std::fs::{self, File};
use std::io::{self, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use log::info;
use nalgebra::DMatrix;
use serde::Deserialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::fmt17;
use crate::incidence::age_points_to_us;
use crate::lexis::{read_binned, read_records_file, write_binned, write_records, N_CAUSES};
use crate::model::ModelFile;
use crate::pipeline::{fit_binned, fit_summary, prepare_records, ungroup_diagnostics, FitOutcome};
use crate::simulate::{simulate_cohort, ScenarioSpec};

#[derive(Debug, Parser)]
#[command(name = "lexhaz", version, about = "Smooth cause-specific hazards on a Lexis grid")]
pub struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true, env = "LEXHAZ_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Fit both cause-specific hazards and write surfaces, SEs and the model.
    Fit {
        /// Individual records (`id,u,s_entry,s_exit,cause`).
        #[arg(long, conflicts_with = "counts", required_unless_present = "counts")]
        input: Option<PathBuf>,
        /// Binned counts (`u_lo,s_lo,events_cause1,events_cause2,exposure`).
        #[arg(long)]
        counts: Option<PathBuf>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Monte-Carlo draws for CIF standard errors.
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Ungroup the final age interval and write fine-grid counts.
    Ungroup {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        output: Option<PathBuf>,
    },
    /// Evaluate a fitted model at arbitrary points.
    Predict {
        #[arg(long)]
        model: PathBuf,
        /// CSV with columns `u,s` (or `t,s` with `--coords ts`).
        #[arg(long)]
        points: PathBuf,
        #[arg(long, value_enum, default_value_t = Coords::Us)]
        coords: Coords,
        /// Output CSV (default: stdout).
        #[arg(long)]
        output: Option<PathBuf>,
        /// Skip Monte-Carlo CIF standard errors.
        #[arg(long)]
        no_cif_se: bool,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        draws: Option<usize>,
    },
    /// Simulate a cohort from a TOML scenario.
    Simulate {
        #[arg(long)]
        scenario: PathBuf,
        /// Output CSV (default: stdout).
        #[arg(long)]
        output: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        n: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Coords {
    Us,
    Ts,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::from_file(p),
        None => Ok(RunConfig::default()),
    }
}

fn open_output(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Long-format table over the evaluation grid. `se` is optional per file.
fn write_long(path: &Path, out: &FitOutcome, value: &DMatrix<f64>, se: Option<&DMatrix<f64>>, value_name: &str) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let mut header = vec!["u", "s", value_name];
    if se.is_some() {
        header.push("se");
    }
    header.push("extrapolated");
    w.write_record(&header)?;
    for (i, &u) in out.eval.u_points.iter().enumerate() {
        for (j, &s) in out.eval.s_points.iter().enumerate() {
            let mut row = vec![fmt17(u), fmt17(s), fmt17(value[(i, j)])];
            if let Some(se) = se {
                row.push(fmt17(se[(i, j)]));
            }
            row.push(out.extrapolated[i][j].to_string());
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn write_fit_outputs(dir: &Path, out: &FitOutcome) -> Result<()> {
    fs::create_dir_all(dir)?;
    for c in 0..N_CAUSES {
        let cdir = dir.join(format!("cause{}", c + 1));
        fs::create_dir_all(&cdir)?;
        let hazard_se = out.surfaces.hazard[c].component_mul(&out.log_hazard_se[c]);
        write_long(&cdir.join("hazard.csv"), out, &out.surfaces.hazard[c], Some(&hazard_se), "hazard")?;
        write_long(&cdir.join("log_hazard_se.csv"), out, &out.log_hazard[c], Some(&out.log_hazard_se[c]), "log_hazard")?;
        write_long(&cdir.join("cumhaz.csv"), out, &out.surfaces.cumhaz[c], None, "cumhaz")?;
        write_long(&cdir.join("cif.csv"), out, &out.surfaces.cif[c], Some(&out.cif_se[c]), "cif")?;
        write_long(&cdir.join("cif_se.csv"), out, &out.cif_se[c], None, "cif_se")?;
    }
    write_long(&dir.join("survival.csv"), out, &out.surfaces.survival, None, "survival")?;
    out.model.save(&dir.join("model.json"))
}

fn cmd_fit(
    input: Option<&Path>,
    counts: Option<&Path>,
    config: Option<&Path>,
    output: Option<&Path>,
    seed: Option<u64>,
    draws: Option<usize>,
) -> Result<()> {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if let Some(d) = draws {
        cfg.monte_carlo.n_draws = d;
    }
    if let Some(o) = output {
        cfg.output.dir = o.to_path_buf();
    }
    cfg.validate()?;
    let dir = cfg.output.dir.clone();
    let (data, ungroup) = match (input, counts) {
        (Some(path), _) => {
            let records = read_records_file(path)?;
            info!("read {} records", records.len());
            let prepared = prepare_records(&records, &cfg)?;
            (prepared.data, prepared.ungroup)
        }
        (None, Some(path)) => (read_binned(File::open(path)?, &cfg.lexis_grid()?)?, None),
        (None, None) => return Err(Error::InvalidInput("either --input or --counts is required".into())),
    };
    let outcome = fit_binned(&data, &cfg)?;
    write_fit_outputs(&dir, &outcome)?;
    write_json(&dir.join("fit_summary.json"), &fit_summary(&outcome, &data, &cfg, ungroup.is_some()))?;
    if let Some(u) = &ungroup {
        write_json(&dir.join("ungroup_diagnostics.json"), &ungroup_diagnostics(u, &cfg))?;
    }
    info!("wrote outputs to {}", dir.display());
    Ok(())
}

fn cmd_ungroup(input: &Path, config: Option<&Path>, output: Option<&Path>) -> Result<()> {
    let mut cfg = load_config(config)?;
    cfg.pclm.enabled = true;
    if let Some(o) = output {
        cfg.output.dir = o.to_path_buf();
    }
    cfg.validate()?;
    let records = read_records_file(input)?;
    let prepared = prepare_records(&records, &cfg)?;
    let dir = &cfg.output.dir;
    fs::create_dir_all(dir)?;
    write_binned(&prepared.data, File::create(dir.join("ungrouped.csv"))?)?;
    let diag = ungroup_diagnostics(prepared.ungroup.as_ref().expect("ungrouping enabled"), &cfg);
    write_json(&dir.join("ungroup_diagnostics.json"), &diag)
}

#[derive(Debug, Deserialize)]
struct RawPointUs {
    u: f64,
    s: f64,
}

#[derive(Debug, Deserialize)]
struct RawPointTs {
    t: f64,
    s: f64,
}

fn read_points<R: Read>(reader: R, coords: Coords) -> Result<Vec<(f64, f64)>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let mut out = Vec::new();
    let bad = |i: usize, e: csv::Error| Error::Data {
        row: i + 2,
        message: e.to_string(),
    };
    match coords {
        Coords::Us => {
            for (i, r) in rdr.deserialize::<RawPointUs>().enumerate() {
                let p = r.map_err(|e| bad(i, e))?;
                out.push((p.u, p.s));
            }
        }
        Coords::Ts => {
            for (i, r) in rdr.deserialize::<RawPointTs>().enumerate() {
                let p = r.map_err(|e| bad(i, e))?;
                out.push((p.t, p.s));
            }
        }
    }
    Ok(out)
}

fn cmd_predict(
    model: &Path,
    points: &Path,
    coords: Coords,
    output: Option<&Path>,
    with_cif_se: bool,
    seed: Option<u64>,
    draws: Option<usize>,
) -> Result<()> {
    let model = ModelFile::load(model)?;
    let mut predictor = model.predictor()?;
    if let Some(s) = seed {
        predictor.monte_carlo.seed = s;
    }
    if let Some(d) = draws {
        predictor.monte_carlo.n_draws = d;
    }
    let raw = read_points(File::open(points)?, coords)?;
    let us = match coords {
        Coords::Us => raw.clone(),
        Coords::Ts => age_points_to_us(&raw)?,
    };
    let preds = predictor.predict(&us, with_cif_se)?;
    let mut w = csv::Writer::from_writer(open_output(output)?);
    let mut header: Vec<String> = match coords {
        Coords::Us => vec!["u".into(), "s".into()],
        Coords::Ts => vec!["t".into(), "s".into(), "u".into()],
    };
    for c in 1..=N_CAUSES {
        for name in ["hazard", "hazard_se", "log_hazard", "log_hazard_se", "cumhaz", "cif", "cif_se"] {
            header.push(format!("{name}_{c}"));
        }
    }
    header.push("survival".into());
    header.push("extrapolated".into());
    w.write_record(&header)?;
    for (p, &(first, s)) in preds.iter().zip(&raw) {
        let mut row = vec![fmt17(first), fmt17(s)];
        if coords == Coords::Ts {
            row.push(fmt17(p.u));
        }
        for c in 0..N_CAUSES {
            row.extend([
                fmt17(p.hazard[c]),
                fmt17(p.hazard_se[c]),
                fmt17(p.log_hazard[c]),
                fmt17(p.log_hazard_se[c]),
                fmt17(p.cumhaz[c]),
                fmt17(p.cif[c]),
                p.cif_se.map_or_else(String::new, |v| fmt17(v[c])),
            ]);
        }
        row.push(fmt17(p.survival));
        row.push(p.extrapolated.to_string());
        w.write_record(&row)?;
    }
    w.flush()?;
    Ok(())
}

fn cmd_simulate(scenario: &Path, output: Option<&Path>, seed: Option<u64>, n: Option<usize>) -> Result<()> {
    let text = fs::read_to_string(scenario)?;
    let mut spec: ScenarioSpec = toml::from_str(&text).map_err(|e| Error::Config(e.to_string()))?;
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(n) = n {
        spec.n = n;
    }
    let records = simulate_cohort(&spec)?;
    write_records(&records, open_output(output)?)
}

pub fn run(cli: Cli) -> Result<()> {
    if let Some(n) = cli.threads {
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    }
    match &cli.command {
        Command::Fit {
            input,
            counts,
            config,
            output,
            seed,
            draws,
        } => cmd_fit(input.as_deref(), counts.as_deref(), config.as_deref(), output.as_deref(), *seed, *draws),
        Command::Ungroup { input, config, output } => cmd_ungroup(input, config.as_deref(), output.as_deref()),
        Command::Predict {
            model,
            points,
            coords,
            output,
            no_cif_se,
            seed,
            draws,
        } => cmd_predict(model, points, *coords, output.as_deref(), !no_cif_se, *seed, *draws),
        Command::Simulate { scenario, output, seed, n } => cmd_simulate(scenario, output.as_deref(), *seed, *n),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn point_parsing() {
        let pts = read_points("u,s\n55,5\n60.5, 0\n".as_bytes(), Coords::Us).unwrap();
        assert_eq!(pts, vec![(55.0, 5.0), (60.5, 0.0)]);
        let ts = read_points("t,s\n60,5\n".as_bytes(), Coords::Ts).unwrap();
        assert_eq!(age_points_to_us(&ts).unwrap(), vec![(55.0, 5.0)]);
        assert!(matches!(read_points("u,s\n55,x\n".as_bytes(), Coords::Us), Err(Error::Data { row: 2, .. })));
    }
}
