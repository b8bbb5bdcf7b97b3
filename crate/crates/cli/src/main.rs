//! `ovimap` command-line front end.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::Context;
use clap::{Parser, Subcommand};
use ovimap_core::eval::DEFAULT_MAX_DIST;
use ovimap_core::pipeline::{
    evaluate_export, label_instances, run, PipelineConfig, ProviderConfig, ProviderKind,
    CONFIG_FILE,
};
use ovimap_core::scene_io::{load_ground_truth, load_map};
use ovimap_core::semantics::{query, write_heatmap};
use ovimap_core::view_select::Strategy;
use ovimap_core::Error;

#[derive(Parser)]
#[command(name = "ovimap", version, about = "Open-vocabulary instance mapping from RGB-D sequences")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Map a dataset and export the instance map.
    Run {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        strategy: Option<Strategy>,
        #[arg(long)]
        provider: Option<ProviderKind>,
        #[arg(long)]
        eval: bool,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        /// Run all stages on the calling thread.
        #[arg(long)]
        sequential: bool,
    },
    /// Render a synthetic scene into the dataset layout.
    Synth {
        #[arg(long)]
        scene: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Rank instances of an exported map against a text query.
    Query {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        text: String,
        #[arg(long)]
        heatmap: Option<PathBuf>,
        #[arg(long)]
        topk: Option<usize>,
        /// Comma-separated label set; defaults to the ground-truth labels of the mapped dataset.
        #[arg(long, value_delimiter = ',')]
        labels: Option<Vec<String>>,
    },
    /// Evaluate an exported map against ground truth.
    Eval {
        #[arg(long)]
        map: PathBuf,
        #[arg(long)]
        gt: PathBuf,
        #[arg(long, default_value_t = DEFAULT_MAX_DIST)]
        max_dist: f64,
    },
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let code = e.downcast_ref::<Error>().map_or(3, Error::exit_code);
            ExitCode::from(code as u8)
        }
    }
}

fn dispatch(cmd: Command) -> anyhow::Result<()> {
    match cmd {
        Command::Run {
            config,
            dataset,
            strategy,
            provider,
            eval,
            out,
            seed,
            sequential,
        } => {
            let mut cfg = match &config {
                Some(path) => PipelineConfig::from_file(path)?,
                None => PipelineConfig::default(),
            };
            cfg.dataset = dataset.or(cfg.dataset);
            cfg.out = out.or(cfg.out);
            if let Some(s) = strategy {
                cfg.selection.strategy = s;
            }
            if let Some(p) = provider {
                cfg.provider.kind = p;
            }
            if let Some(s) = seed {
                cfg.seed = s;
            }
            cfg.eval |= eval;
            cfg.concurrent &= !sequential;
            cfg.validate()?;
            let (_, report) = run(&cfg)?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
        Command::Synth { scene, out } => {
            let s = ovimap_core::synth::preset(&scene).ok_or_else(|| {
                Error::Config(format!(
                    "unknown scene '{scene}' (expected boxes3, orbit-sphere or revisit)"
                ))
            })?;
            s.write(&out)?;
            println!("wrote {} frames to {}", s.poses.len(), out.display());
            Ok(())
        }
        Command::Query {
            map,
            text,
            heatmap,
            topk,
            labels,
        } => query_command(&map, &text, heatmap.as_deref(), topk, labels),
        Command::Eval { map, gt, max_dist } => {
            let loaded = load_map(&map)?;
            let gt = load_ground_truth(&gt)?;
            let mut provider = provider_for(&loaded.manifest.provider)?;
            let report = evaluate_export(&loaded, &gt, max_dist, provider.as_mut())?;
            println!("{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

fn provider_for(
    desc: &serde_json::Value,
) -> anyhow::Result<Box<dyn ovimap_core::semantics::FeatureProvider>> {
    let cfg = ProviderConfig::from_description(desc)
        .ok_or_else(|| Error::Config(format!("map was built with an unusable provider: {desc}")))?;
    Ok(cfg.build(None)?)
}

/// Ground-truth label names of the dataset the map was built from, if recorded.
fn dataset_labels(map: &Path) -> Option<Vec<String>> {
    let cfg = PipelineConfig::from_file(&map.join(CONFIG_FILE)).ok()?;
    let gt = load_ground_truth(&cfg.dataset?.join("gt")).ok()?;
    Some(gt.label_names)
}

fn query_command(
    map: &Path,
    text: &str,
    heatmap: Option<&Path>,
    topk: Option<usize>,
    labels: Option<Vec<String>>,
) -> anyhow::Result<()> {
    let loaded = load_map(map)?;
    if loaded.featured().next().is_none() {
        println!("no featured instances");
        return Ok(());
    }
    let mut provider = provider_for(&loaded.manifest.provider)?;
    let q = provider.embed_text(text).map_err(Error::from)?;
    let ranked = query(loaded.featured(), &q);
    let label_names = labels.or_else(|| dataset_labels(map)).unwrap_or_default();
    let assigned = if label_names.is_empty() {
        BTreeMap::new()
    } else {
        label_instances(loaded.featured(), &label_names, provider.as_mut())?
    };
    for (id, sim) in ranked.iter().take(topk.unwrap_or(usize::MAX)) {
        let label = assigned.get(id).map_or("-", |&i| label_names[i].as_str());
        println!("{id}\t{sim:.6}\t{label}");
    }
    if let Some(path) = heatmap {
        let sims = ranked.iter().copied().collect();
        write_heatmap(&loaded.points, &sims, path)
            .with_context(|| format!("writing heatmap {}", path.display()))?;
    }
    Ok(())
}
