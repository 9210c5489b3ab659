use std::path::PathBuf;

use clap::{Parser, Subcommand};

use super::{
    ablation_text, cmd_ablate_fusion, cmd_aggregate, cmd_eval, cmd_ingest, cmd_patches, cmd_synth, load_config, run_cascade, text_summary,
    DatasetSource, PipelineConfig, StageName,
};
use crate::error::{Error, Result};

#[derive(Debug, Parser)]
#[command(
    name = "mammocascade",
    version,
    about = "Patch to single-view to two-view mammogram classifier cascade",
    after_help = "Any config field can be overridden with --section.key=value, e.g. --single.max_epochs=4"
)]
pub struct Cli {
    /// JSON pipeline config; built-in desk-scale defaults when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Overrides the config output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate synthetic two-view phantoms with masks and a manifest.
    Synth,
    /// Load and validate the configured dataset and print counts.
    Ingest,
    /// Sample and export training patches.
    Patches,
    /// Run the three-stage cascade and write report.json.
    Run {
        /// Reuse checkpoints of earlier stages from the output directory.
        #[arg(long, value_enum, default_value = "patch")]
        from_stage: StageName,
    },
    /// Metrics and ROC plot for a score CSV, or aggregation of fold values.
    Eval {
        /// CSV with exam_id,score,label columns.
        #[arg(long)]
        scores: Option<PathBuf>,
        /// Comma-separated fold values to aggregate (mean, population std).
        #[arg(long, value_delimiter = ',')]
        aggregate: Vec<f64>,
    },
    /// Train both fusion modes from the same single-view models over
    /// several seeds.
    AblateFusion {
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long, value_enum, default_value = "patch")]
        from_stage: StageName,
    },
}

/// Splits `--a.b=value` and `--field=value` config overrides from the
/// arguments clap understands. A bare `--field=value` counts as an override
/// when `field` is a top-level config key.
pub fn split_overrides(args: &[String]) -> Result<(Vec<String>, Vec<(String, String)>)> {
    let top = serde_json::to_value(PipelineConfig::default())?;
    let is_field = |k: &str| top.as_object().is_some_and(|o| o.contains_key(k)) && !matches!(k, "seed" | "output_dir");
    let mut rest = Vec::new();
    let mut overrides = Vec::new();
    for a in args {
        match a.strip_prefix("--").and_then(|s| s.split_once('=')) {
            Some((key, value)) if key.contains('.') || is_field(key) => overrides.push((key.to_string(), value.to_string())),
            _ if a.starts_with("--") && !a.contains('=') && a[2..].contains('.') => {
                return Err(Error::config(format!("override {a} needs the form --section.key=value")));
            }
            _ => rest.push(a.clone()),
        }
    }
    Ok((rest, overrides))
}

fn execute(cli: Cli, mut overrides: Vec<(String, String)>) -> Result<()> {
    if let Some(s) = cli.seed {
        overrides.push(("seed".into(), s.to_string()));
    }
    if let Some(o) = &cli.out {
        overrides.push(("output_dir".into(), serde_json::to_string(o)?));
    }
    match cli.command {
        Command::Eval { scores, aggregate } => {
            if scores.is_none() && aggregate.is_empty() {
                return Err(Error::config("eval needs --scores or --aggregate"));
            }
            if let Some(path) = scores {
                let out = cli.out.unwrap_or_else(|| path.with_extension("eval"));
                let r = cmd_eval(&path, &out)?;
                println!("n {} (pos {}, neg {})", r.n, r.n_pos, r.n_neg);
                println!("AUC {:.4} ± {:.4}", r.auc, r.se);
                println!(
                    "equal-error point: accuracy {:.4}, sensitivity {:.4}, specificity {:.4}, threshold {:.4}",
                    r.eer.accuracy, r.eer.sensitivity, r.eer.specificity, r.eer.threshold
                );
                println!("wrote {}", out.display());
            }
            if !aggregate.is_empty() {
                let a = cmd_aggregate(&aggregate)?;
                println!("{:.4} ± {:.4}", a.mean, a.std);
            }
            return Ok(());
        }
        Command::Synth => {
            let cfg = load_config(cli.config.as_deref(), &overrides)?;
            let DatasetSource::Synth(p) = &cfg.dataset else {
                return Err(Error::config("synth needs a synthetic dataset section"));
            };
            let p = super::SynthParams { seed: cli.seed.unwrap_or(p.seed), ..p.clone() };
            let files = cmd_synth(&p, &cfg.output_dir)?;
            println!("{} exams, {} images, {} masks", files.n_exams, files.n_images, files.n_masks);
            println!("manifest {}", files.manifest.display());
        }
        Command::Ingest => {
            let cfg = load_config(cli.config.as_deref(), &overrides)?;
            let s = cmd_ingest(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::Patches => {
            let cfg = load_config(cli.config.as_deref(), &overrides)?;
            let s = cmd_patches(&cfg)?;
            println!("{} patches in {}", s.n_patches, s.dir);
            for (label, f) in &s.distribution {
                println!("  {label:?}: {f:.3}");
            }
        }
        Command::Run { from_stage } => {
            let cfg = load_config(cli.config.as_deref(), &overrides)?;
            let r = run_cascade(&cfg, from_stage, &[])?;
            print!("{}", text_summary(&r));
            println!("report {}", cfg.output_dir.join("report.json").display());
        }
        Command::AblateFusion { seeds, from_stage } => {
            let cfg = load_config(cli.config.as_deref(), &overrides)?;
            let r = cmd_ablate_fusion(&cfg, seeds, from_stage)?;
            print!("{}", ablation_text(&r));
        }
    }
    Ok(())
}

/// Parses `args` (without the program name), runs the command and returns
/// the process exit code.
pub fn run_cli(args: &[String]) -> i32 {
    let (rest, overrides) = match split_overrides(args) {
        Ok(v) => v,
        Err(e) => {
            eprintln!("error: {e}");
            return e.exit_code();
        }
    };
    let cli = match Cli::try_parse_from(std::iter::once("mammocascade".to_string()).chain(rest)) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match execute(cli, overrides) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
