use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use progclust_core::cohort::{apply_exclusions, parse_cohort, write_cohort};
use progclust_core::features::{DESCRIPTIVE_NAMES, FEATURE_NAMES};
use progclust_core::metrics::{audit_metric, distance_matrix};
use progclust_core::pipeline::{
    extract_features, fit_cohort, render_reports, run_all, run_workflow, weak_labels, write_assignments, write_km_curves,
    write_results_csv, Config, Inputs, Manifest, Prepared, WorkflowRun, WorkflowSpec,
};
use progclust_core::synth::{generate_cohort, SynthSpec};
use progclust_core::weaksup::train_wsd;
use progclust_core::{Measure, Sequence};

#[derive(Parser, Debug)]
#[command(name = "progclust", version, about = "Cluster patients by disease-progression similarity")]
struct Cli {
    /// Global seed; overrides the config file
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Run directory for all outputs
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,

    /// Key-value config file, or a results.json manifest to reuse its config
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Input {
    /// Visit table (patient_id, day, total, optional q1..q12)
    #[arg(long, default_value = "visits.csv")]
    visits: PathBuf,

    /// Outcome table (patient_id, survival_days, event, optional first_contact_day)
    #[arg(long, default_value = "outcomes.csv")]
    outcomes: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic cohort with planted progression archetypes
    Synth {
        #[arg(long, default_value_t = 150)]
        patients: usize,
        /// Score noise standard deviation, in points
        #[arg(long, default_value_t = 1.0)]
        noise: f64,
        /// 3 (slow/medium/fast) or 4 (adds very slow)
        #[arg(long, default_value_t = 3)]
        archetypes: usize,
    },
    /// Validate the input tables and apply the exclusion rules
    Ingest(Input),
    /// Fit the sigmoid trajectory of every patient
    Fit(Input),
    /// Per-patient features and the normalized pair table
    Features(Input),
    /// Labeling-function votes, label model and inferred pair labels
    Label(Input),
    /// Train the weak-supervised distance weights
    TrainWsd(Input),
    /// Distance matrix and metric audit for one measure
    Dist {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value = "WSD")]
        measure: Measure,
    },
    /// 2-D embedding of one measure's distance matrix
    Embed {
        #[command(flatten)]
        input: Input,
        #[arg(long, default_value = "WSD")]
        measure: Measure,
    },
    /// Cluster assignments of one workflow, e.g. WSD_UMAP_KME_3 or GOM_2
    Cluster {
        #[command(flatten)]
        input: Input,
        #[arg(long)]
        workflow: WorkflowSpec,
    },
    /// Silhouette and log-rank evaluation of the given workflows
    Eval {
        #[command(flatten)]
        input: Input,
        #[arg(long, required = true, num_args = 1.., value_delimiter = ',')]
        workflow: Vec<WorkflowSpec>,
    },
    /// Run the full workflow grid and write every report
    Grid(Input),
    /// Re-run a recorded grid from its results.json and write the reports
    Report {
        #[arg(long)]
        manifest: PathBuf,
    },
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut config = match &cli.config {
        Some(path) => Config::load(path).with_context(|| format!("loading config {}", path.display()))?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    Ok(config)
}

fn read_cohort(input: &Input) -> Result<Vec<Sequence>> {
    let raw = parse_cohort(&input.visits, &input.outcomes)?;
    let (cohort, report) = apply_exclusions(raw);
    log::info!("{} of {} patients retained", report.retained, report.input);
    if cohort.len() < 3 {
        bail!("{} patients left after exclusions; at least 3 are needed", cohort.len());
    }
    Ok(cohort)
}

fn csv_writer(path: &Path) -> Result<csv::Writer<std::fs::File>> {
    csv::Writer::from_path(path).with_context(|| format!("creating {}", path.display()))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?).with_context(|| format!("writing {}", path.display()))
}

/// A config holding only what one workflow needs.
fn narrowed(config: &Config, spec: &WorkflowSpec) -> Config {
    let mut c = config.clone();
    match *spec {
        WorkflowSpec::Proposed { measure, embed, .. } => {
            c.measures = vec![measure];
            c.embed = embed;
            c.baselines = false;
        }
        WorkflowSpec::Baseline(_) => {
            c.measures = vec![Measure::Man];
            c.embed = false;
            c.baselines = true;
        }
    }
    c.k_min = c.k_min.min(spec.k());
    c.k_max = c.k_max.max(spec.k());
    c
}

fn run_single(config: &Config, input: &Input, spec: &WorkflowSpec) -> Result<(Prepared, WorkflowRun)> {
    let p = Prepared::build(parse_cohort(&input.visits, &input.outcomes)?, &narrowed(config, spec))?;
    let run = run_workflow(&p, spec);
    Ok((p, run))
}

fn print_summary(runs: &[WorkflowRun], manifest: &Manifest) {
    let failed = runs.iter().filter(|r| !r.completed()).count();
    println!(
        "{} workflows, {} failed, {} pass silhouette >= {} and p < {}",
        runs.len(),
        failed,
        manifest.ranking.ranked.len(),
        manifest.config.sil_min,
        manifest.config.p_max
    );
    for r in manifest.ranking.ranked.iter().take(10) {
        println!(
            "  {:<18} sizes {:<20} silhouette {:.3}  LRS {:.2}  p {:.2e}",
            r.workflow,
            format!("{:?}", r.cluster_sizes),
            r.silhouette_mean.unwrap_or(f64::NAN),
            r.lrs_min.unwrap_or(f64::NAN),
            r.logrank_p_max.unwrap_or(f64::NAN)
        );
    }
    for (name, err) in &manifest.failed {
        println!("  failed {name}: {err}");
    }
}

fn grid(config: &Config, input: Inputs, out: &Path) -> Result<bool> {
    let p = Prepared::build(parse_cohort(&input.visits, &input.outcomes)?, config)?;
    let grid = p.grid();
    log::info!("running {} workflows on {} patients", grid.len(), p.cohort.len());
    let runs = run_all(&p, &grid);
    let manifest = render_reports(&p, &runs, out, Some(input))?;
    print_summary(&runs, &manifest);
    println!("reports written to {}", out.display());
    Ok(runs.iter().all(WorkflowRun::completed))
}

fn absolute(path: &Path) -> PathBuf {
    std::fs::canonicalize(path).unwrap_or_else(|_| path.to_path_buf())
}

fn run(cli: &Cli) -> Result<bool> {
    let config = load_config(cli)?;
    let out = &cli.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    match &cli.command {
        Command::Synth { patients, noise, archetypes } => {
            let spec = match archetypes {
                3 => SynthSpec::three_archetypes(*patients, *noise, config.seed),
                4 => SynthSpec::four_archetypes(*patients, *noise, config.seed),
                n => bail!("--archetypes must be 3 or 4, got {n}"),
            };
            let cohort = generate_cohort(&spec)?;
            cohort.write(out)?;
            write_json(&out.join("synth_spec.json"), &spec)?;
            println!("{} patients written to {}", cohort.sequences.len(), out.display());
        }
        Command::Ingest(input) => {
            let raw = parse_cohort(&input.visits, &input.outcomes)?;
            let (cohort, report) = apply_exclusions(raw);
            write_cohort(out, &cohort)?;
            report.write_json(&out.join("exclusions.json"))?;
            println!("{} of {} patients retained", report.retained, report.input);
            for (rule, n) in &report.counts {
                println!("  {rule:?}: {n} excluded");
            }
        }
        Command::Fit(input) => {
            let cohort = read_cohort(input)?;
            let fits = fit_cohort(&cohort, &config);
            let mut w = csv_writer(&out.join("fits.csv"))?;
            w.write_record(["patient_id", "b", "m", "a", "c", "rmse", "converged", "increasing", "d50"])?;
            for (s, f) in cohort.iter().zip(&fits) {
                w.write_record([
                    s.patient_id.clone(),
                    f.b.to_string(),
                    f.m.to_string(),
                    f.a.to_string(),
                    f.c.to_string(),
                    f.rmse.to_string(),
                    f.converged.to_string(),
                    f.is_increasing().to_string(),
                    f.d50(config.horizon_days).to_string(),
                ])?;
            }
            w.flush()?;
            let mut rmse: Vec<f64> = fits.iter().map(|f| f.rmse).collect();
            rmse.sort_by(f64::total_cmp);
            println!("{} fits, median RMSE {:.3}", fits.len(), rmse[rmse.len() / 2]);
        }
        Command::Features(input) => {
            let cohort = read_cohort(input)?;
            let fits = fit_cohort(&cohort, &config);
            let space = extract_features(&cohort, &fits, &config)?;
            let mut w = csv_writer(&out.join("features.csv"))?;
            w.write_record(std::iter::once("patient_id").chain(FEATURE_NAMES))?;
            for (id, f) in space.ids.iter().zip(&space.features) {
                w.write_record(std::iter::once(id.clone()).chain(f.to_array().iter().map(f64::to_string)))?;
            }
            w.flush()?;
            let mut w = csv_writer(&out.join("pairs.csv"))?;
            w.write_record(["patient_a", "patient_b"].into_iter().chain(DESCRIPTIVE_NAMES))?;
            for (&(i, j), row) in space.table.pairs.iter().zip(&space.table.normalized) {
                w.write_record(
                    [space.ids[i].clone(), space.ids[j].clone()]
                        .into_iter()
                        .chain(row.iter().map(f64::to_string)),
                )?;
            }
            w.flush()?;
            let retained: Vec<&str> = space.table.retained_columns().iter().map(|&c| DESCRIPTIVE_NAMES[c]).collect();
            write_json(
                &out.join("pair_normalization.json"),
                &serde_json::json!({
                    "pair_normalization": space.table.params,
                    "patient_scaling": space.patient_scaling,
                    "retained_variables": retained,
                }),
            )?;
            println!("{} patients, {} pairs, retained {}", space.ids.len(), space.table.len(), retained.join(", "));
        }
        Command::Label(input) => {
            let cohort = read_cohort(input)?;
            let fits = fit_cohort(&cohort, &config);
            let space = extract_features(&cohort, &fits, &config)?;
            let (lm, model, labels) = weak_labels(&space, &config)?;
            let mut w = csv_writer(&out.join("labels.csv"))?;
            let lf_names: Vec<String> = lm.columns.iter().map(|&c| format!("LF_{}", DESCRIPTIVE_NAMES[c])).collect();
            w.write_record(
                ["patient_a", "patient_b"]
                    .into_iter()
                    .map(String::from)
                    .chain(lf_names)
                    .chain(["posterior".into(), "label".into()]),
            )?;
            for (r, (&(i, j), l)) in space.table.pairs.iter().zip(&labels).enumerate() {
                w.write_record(
                    [space.ids[i].clone(), space.ids[j].clone()]
                        .into_iter()
                        .chain(lm.row(r).iter().map(|v| v.as_str().to_string()))
                        .chain([l.posterior.to_string(), l.label.as_str().to_string()]),
                )?;
            }
            w.flush()?;
            write_json(&out.join("label_model.json"), &model)?;
            println!(
                "{} pairs, prior {:.3}, accuracies {:.3?}, {} EM iterations",
                lm.rows, model.prior, model.accuracy, model.iterations
            );
        }
        Command::TrainWsd(input) => {
            let cohort = read_cohort(input)?;
            let fits = fit_cohort(&cohort, &config);
            let space = extract_features(&cohort, &fits, &config)?;
            let (_, _, labels) = weak_labels(&space, &config)?;
            let w = train_wsd(&space.table, &labels, &config.svm_options())?;
            write_json(&out.join("wsd_weights.json"), &w)?;
            for (name, weight) in w.names.iter().zip(&w.weights) {
                println!("  {name:<32} {weight:+.4}");
            }
            println!("duality gap {:.2e} after {} passes", w.gap, w.passes);
        }
        Command::Dist { input, measure } => {
            let cohort = read_cohort(input)?;
            let fits = fit_cohort(&cohort, &config);
            let space = extract_features(&cohort, &fits, &config)?;
            let weights = if *measure == Measure::Wsd {
                let (_, _, labels) = weak_labels(&space, &config)?;
                Some(train_wsd(&space.table, &labels, &config.svm_options())?)
            } else {
                None
            };
            let d = distance_matrix(&space, *measure, weights.as_ref())?;
            let tag = measure.tag();
            let bin = out.join(format!("dist_{tag}.bin"));
            let file = std::fs::File::create(&bin).with_context(|| format!("creating {}", bin.display()))?;
            d.write_binary(std::io::BufWriter::new(file))?;
            d.write_csv(&out.join(format!("dist_{tag}.csv")))?;
            let audit = audit_metric(&d, config.audit_triples, config.seeds().audit);
            write_json(&out.join(format!("audit_{tag}.json")), &audit)?;
            println!(
                "{tag}: {} x {} matrix, triangle inequality holds on {:.3}% of {} triples (max violation {:.3e})",
                d.n, d.n, audit.triangle_pct, audit.triples_checked, audit.max_violation
            );
        }
        Command::Embed { input, measure } => {
            let cohort = parse_cohort(&input.visits, &input.outcomes)?;
            let mut c = config.clone();
            c.measures = vec![*measure];
            c.embed = true;
            c.baselines = false;
            let p = Prepared::build(cohort, &c)?;
            let e = match p.embeddings.get(measure) {
                Some(Ok(e)) => e,
                Some(Err(e)) => bail!("embedding of {measure} failed: {e}"),
                None => bail!("{measure} matrix unavailable: {}", p.wsd_error.as_deref().unwrap_or("unknown")),
            };
            e.write_csv(&out.join(format!("embedding_{}.csv", measure.tag())))?;
            e.write_csv(&out.join("embedding.csv"))?;
            println!(
                "{} points embedded; kernel a = {:.4}, b = {:.4}; {} connected component(s)",
                e.ids.len(),
                e.kernel.0,
                e.kernel.1,
                e.connected_components
            );
        }
        Command::Cluster { input, workflow } => {
            let (p, run) = run_single(&config, input, workflow)?;
            if let Some(err) = &run.result.error {
                bail!("{workflow}: {err}");
            }
            write_assignments(&out.join("assignments.csv"), &p.space.ids, std::slice::from_ref(&run))?;
            println!("{workflow}: cluster sizes {:?}", run.result.cluster_sizes);
        }
        Command::Eval { input, workflow } => {
            let runs = workflow
                .iter()
                .map(|spec| run_single(&config, input, spec).map(|(_, r)| r))
                .collect::<Result<Vec<_>>>()?;
            let results: Vec<_> = runs.iter().map(|r| r.result.clone()).collect();
            write_results_csv(&out.join("results.csv"), &results)?;
            write_km_curves(&out.join("km_curves.csv"), &runs)?;
            for r in &results {
                match &r.error {
                    Some(e) => println!("{}: failed: {e}", r.workflow),
                    None => println!(
                        "{}: sizes {:?}, silhouette {}, max p {}, min LRS {}",
                        r.workflow,
                        r.cluster_sizes,
                        fmt_opt(r.silhouette_mean),
                        fmt_opt(r.logrank_p_max),
                        fmt_opt(r.lrs_min)
                    ),
                }
            }
            return Ok(runs.iter().all(WorkflowRun::completed));
        }
        Command::Grid(input) => {
            let inputs = Inputs { visits: absolute(&input.visits), outcomes: absolute(&input.outcomes) };
            return grid(&config, inputs, out);
        }
        Command::Report { manifest } => {
            let text = std::fs::read_to_string(manifest).with_context(|| format!("reading {}", manifest.display()))?;
            let recorded: Manifest = serde_json::from_str(&text).context("parsing manifest")?;
            let inputs = recorded.inputs.context("manifest does not record its input files")?;
            let mut config = recorded.config;
            if let Some(seed) = cli.seed {
                config.seed = seed;
            }
            return grid(&config, inputs, out);
        }
    }
    Ok(true)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "n/a".into(), |x| format!("{x:.4}"))
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
