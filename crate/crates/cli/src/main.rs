//! `gamirl`: generate expert data, train reward learners, evaluate and plot.

mod plot;

use std::fs::{self, File, OpenOptions};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use gamirl_core::adversarial::write_history;
use gamirl_core::evaluation::{read_results, write_results, ResultRow, ShapeGraph, RESULTS_HEADER};
use gamirl_core::experiment::{
    evaluate_run, run_sweep, train_method, Environment, ExperimentConfig, ModelFile, MODEL_VERSION,
};
use gamirl_core::generator::QTable;
use gamirl_core::mdp::{read_trajectories, write_trajectories};
use gamirl_core::{evaluate_policy, value_iteration, Error, TabularPolicy, Trajectory};

const OUT_ENV: &str = "GAMIRL_OUT";
const DEFAULT_OUT: &str = "runs";

#[derive(Parser, Debug)]
#[command(name = "gamirl", version, about = "Batch inverse RL with additive rewards on the sepsis simulator")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct Global {
    /// Run only this seed instead of the seeds listed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// TOML experiment config. Unknown keys are rejected.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output root. Falls back to $GAMIRL_OUT, then `runs`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample expert train/test trajectories and dump the true reward tables.
    GenExpert,
    /// Train the configured method, one run directory per seed.
    Train {
        /// JSONL training trajectories. Sampled from the expert when omitted.
        #[arg(long)]
        expert: Option<PathBuf>,
    },
    /// Score a run directory and append a row to `<out>/results.csv`.
    Eval {
        #[arg(long)]
        run: PathBuf,
        /// JSONL test trajectories. Sampled from the expert when omitted.
        #[arg(long)]
        test: Option<PathBuf>,
        /// Skip the ground truth: `return` is measured under the learned
        /// reward and `dist` is left empty.
        #[arg(long)]
        no_gt: bool,
    },
    /// Draw one SVG per feature comparing shape CSVs to a reference.
    Plot {
        /// `label=path` of a shape CSV; repeatable.
        #[arg(long = "shape", required = true)]
        shapes: Vec<String>,
        /// Reference shape CSV the others are scaled to.
        #[arg(long)]
        gt: PathBuf,
    },
    /// Run every configured cell and seed and write `<out>/results.csv`.
    Sweep,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(exit_code(&err))
        }
    }
}

/// 2 for invalid input, 3 for training that diverged or did not converge,
/// 1 otherwise.
fn exit_code(err: &anyhow::Error) -> u8 {
    for cause in err.chain() {
        if let Some(e) = cause.downcast_ref::<Error>() {
            return match e {
                Error::Divergence(_) | Error::IterationLimit { .. } => 3,
                Error::Io(_) | Error::Json(_) => 1,
                _ => 2,
            };
        }
    }
    1
}

fn run(cli: Cli) -> Result<()> {
    let out = out_root(cli.global.out.clone());
    let mut cfg = match &cli.global.config {
        Some(path) => ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = cli.global.seed {
        cfg.seeds = vec![seed];
    }
    cfg.validate()?;
    match cli.command {
        Command::GenExpert => gen_expert(&cfg, &out),
        Command::Train { expert } => train(&cfg, &out, expert.as_deref()),
        Command::Eval { run, test, no_gt } => eval(&out, &run, test.as_deref(), no_gt, cli.global.seed),
        Command::Plot { shapes, gt } => plot_shapes(&out, &shapes, &gt),
        Command::Sweep => sweep(&cfg, &out),
    }
}

fn out_root(flag: Option<PathBuf>) -> PathBuf {
    flag.or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?))
}

fn expert_dir(cfg: &ExperimentConfig, out: &Path, seed: u64) -> PathBuf {
    out.join(format!("expert_{}_g{}_s{seed}", cfg.mdp_kind, cfg.gamma))
}

fn gen_expert(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let env = Environment::new(cfg)?;
    println!("expert return {:.4}, uniform return {:.4}", env.expert_return, env.uniform_return);
    for &seed in &cfg.seeds {
        let dir = expert_dir(cfg, out, seed);
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let (train, test) = env.expert_batches(cfg.n_trajectories, seed);
        write_trajectories(&dir.join("train.jsonl"), &train)?;
        write_trajectories(&dir.join("test.jsonl"), &test)?;
        let mut w = create(&dir.join("reward.csv"))?;
        env.truth.write_csv(&mut w)?;
        w.flush()?;
        println!("{}", dir.display());
    }
    Ok(())
}

fn load_trajectories(path: &Path) -> Result<Vec<Trajectory>> {
    read_trajectories(path).with_context(|| format!("reading {}", path.display()))
}

fn train(cfg: &ExperimentConfig, out: &Path, expert: Option<&Path>) -> Result<()> {
    let env = Environment::new(cfg)?;
    let given = expert.map(load_trajectories).transpose()?;
    for &seed in &cfg.seeds {
        let batch;
        let train = match &given {
            Some(t) => t.as_slice(),
            None => {
                batch = env.expert_batches(cfg.n_trajectories, seed).0;
                batch.as_slice()
            }
        };
        let run = train_method(cfg, &env, train, seed)?;
        let dir = out.join(cfg.run_name(seed));
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;

        let mut run_cfg = cfg.clone();
        run_cfg.seeds = vec![seed];
        fs::write(dir.join("config.toml"), run_cfg.to_toml_string()?)?;
        ModelFile { v: MODEL_VERSION, method: cfg.method, model: run.model.clone() }.save(&dir.join("model.json"))?;
        fs::write(dir.join("policy.json"), serde_json::to_string(&run.policy)?)?;

        let planning = match &run.estimated {
            Some(est) => {
                let mut w = create(&dir.join("transitions.csv"))?;
                est.write_csv(&mut w)?;
                w.flush()?;
                est.to_mdp(&env.mdp)?
            }
            None => env.mdp.clone(),
        };
        let reward = run.model.planning_reward(&env.features);
        let plan = value_iteration(&planning, reward.as_ref(), 1e-8)?;
        let q = QTable { num_states: planning.num_states(), num_actions: planning.num_actions(), values: plan.q_values };
        let mut w = create(&dir.join("q.csv"))?;
        q.write_csv(&mut w)?;
        w.flush()?;

        if !run.history.is_empty() {
            let mut w = create(&dir.join("history.csv"))?;
            write_history(&run.history, &mut w)?;
            w.flush()?;
        }
        if let Some(mma) = &run.mma {
            let mut w = create(&dir.join("margins.csv"))?;
            mma.write_margins(&mut w)?;
            w.flush()?;
        }
        if let Some(shape) = &run.shape {
            let mut w = create(&dir.join("shape.csv"))?;
            shape.write_csv(&mut w)?;
            w.flush()?;
            let counts = gamirl_core::reward_models::FeatureCounts {
                counts: shape.features.iter().map(|f| f.points.iter().map(|p| p.count).collect()).collect(),
            };
            let gt = gamirl_core::evaluation::ground_truth_graph(cfg.mdp_kind, &counts)?;
            let mut w = create(&dir.join("gt_shape.csv"))?;
            gt.write_csv(&mut w)?;
            w.flush()?;
        }
        println!("{}", dir.display());
    }
    Ok(())
}

fn eval(out: &Path, run_dir: &Path, test: Option<&Path>, no_gt: bool, seed_flag: Option<u64>) -> Result<()> {
    let cfg = ExperimentConfig::load(&run_dir.join("config.toml"))
        .with_context(|| format!("loading {}", run_dir.join("config.toml").display()))?;
    let seed = match (seed_flag, cfg.seeds.as_slice()) {
        (Some(s), _) => s,
        (None, [s]) => *s,
        _ => return Err(Error::Validation("run config must list exactly one seed".into()).into()),
    };
    let model = ModelFile::load(&run_dir.join("model.json"))
        .with_context(|| format!("loading {}", run_dir.join("model.json").display()))?;
    if model.method != cfg.method {
        return Err(Error::Validation(format!("model method {} does not match config method {}", model.method, cfg.method)).into());
    }
    let policy_path = run_dir.join("policy.json");
    let policy: TabularPolicy = serde_json::from_str(
        &fs::read_to_string(&policy_path).with_context(|| format!("reading {}", policy_path.display()))?,
    )
    .map_err(Error::from)?;
    let env = Environment::new(&cfg)?;
    if policy.num_states() != env.mdp.num_states() || policy.num_actions() != env.mdp.num_actions() {
        return Err(Error::Shape { expected: env.mdp.num_states() * env.mdp.num_actions(), got: policy.num_states() * policy.num_actions() }.into());
    }
    let test = match test {
        Some(p) => load_trajectories(p)?,
        None => env.expert_batches(cfg.n_trajectories, seed).1,
    };
    let shape_path = run_dir.join("shape.csv");
    let shape = if shape_path.exists() {
        Some(ShapeGraph::read_csv(BufReader::new(File::open(&shape_path)?)).with_context(|| format!("reading {}", shape_path.display()))?)
    } else {
        None
    };
    let row = if no_gt {
        let reward = model.model.planning_reward(&env.features);
        let mut row = evaluate_run(&cfg, &env, &policy, None, &test, seed)?;
        row.policy_return = evaluate_policy(&env.mdp, &policy, reward.as_ref());
        row
    } else {
        evaluate_run(&cfg, &env, &policy, shape.as_ref(), &test, seed)?
    };
    append_result(&out.join("results.csv"), &row)?;
    println!("{}", row.to_csv_line());
    Ok(())
}

/// Appends a row, writing the header first when the file is new and checking
/// it otherwise.
fn append_result(path: &Path, row: &ResultRow) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let exists = path.exists() && fs::metadata(path)?.len() > 0;
    if exists {
        read_results(BufReader::new(File::open(path)?)).with_context(|| format!("reading {}", path.display()))?;
    }
    let mut f = OpenOptions::new().create(true).append(true).open(path)?;
    if !exists {
        writeln!(f, "{RESULTS_HEADER}")?;
    }
    writeln!(f, "{}", row.to_csv_line())?;
    Ok(())
}

fn plot_shapes(out: &Path, shapes: &[String], gt: &Path) -> Result<()> {
    let read = |p: &Path| -> Result<ShapeGraph> {
        let f = File::open(p).with_context(|| format!("opening {}", p.display()))?;
        ShapeGraph::read_csv(BufReader::new(f)).with_context(|| format!("reading {}", p.display()))
    };
    let reference = read(gt)?;
    let mut series = Vec::new();
    for spec in shapes {
        let (label, path) = spec
            .split_once('=')
            .filter(|(l, p)| !l.is_empty() && !p.is_empty())
            .ok_or_else(|| Error::Validation(format!("--shape expects label=path, got {spec:?}")))?;
        series.push((label.to_string(), read(Path::new(path))?));
    }
    let dir = out.join("plots");
    fs::create_dir_all(&dir)?;
    for path in plot::write_plots(&dir, &reference, &series)? {
        println!("{}", path.display());
    }
    Ok(())
}

fn sweep(cfg: &ExperimentConfig, out: &Path) -> Result<()> {
    let rows = run_sweep(cfg)?;
    fs::create_dir_all(out)?;
    let path = out.join("results.csv");
    let mut w = create(&path)?;
    write_results(&rows, &mut w)?;
    w.flush()?;
    println!("{} rows -> {}", rows.len(), path.display());
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_follow_error_kind() {
        let code = |e: Error| exit_code(&anyhow::Error::from(e).context("outer"));
        assert_eq!(code(Error::Validation("x".into())), 2);
        assert_eq!(code(Error::Parse { line: 1, message: "x".into() }), 2);
        assert_eq!(code(Error::Divergence("nan".into())), 3);
        assert_eq!(code(Error::IterationLimit { sweeps: 1, residual: 1.0 }), 3);
        assert_eq!(code(Error::Io(std::io::Error::other("x"))), 1);
        assert_eq!(exit_code(&anyhow::anyhow!("plain")), 1);
    }

    #[test]
    fn flag_beats_environment() {
        assert_eq!(out_root(Some(PathBuf::from("a"))), PathBuf::from("a"));
    }
}
