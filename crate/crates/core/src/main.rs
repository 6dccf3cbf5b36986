use std::path::PathBuf;
use std::process::ExitCode;

use blockforge::campaign::{cmd_disassemble, cmd_fuzz, cmd_report, cmd_similarity, CampaignConfig, CampaignError, SeedEntry};
use blockforge::code::SeedStyle;
use blockforge::executor::RunnerConfig;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "blockforge", version, about = "Code-assembly fuzzer for deep learning library APIs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a fuzzing campaign.
    Fuzz(Box<FuzzArgs>),
    /// Print the template and blocks of a seed.
    Disassemble {
        #[arg(long)]
        seed: PathBuf,
        #[arg(long)]
        kb_dir: PathBuf,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, value_enum)]
        style: Option<StyleArg>,
    },
    /// Print ranked functional similarity from the knowledge base.
    Similarity {
        #[arg(long)]
        kb_dir: PathBuf,
        /// Fully-qualified API name; all APIs when omitted.
        #[arg(long)]
        api: Option<String>,
        #[arg(long)]
        top: Option<usize>,
    },
    /// Summarize a finished campaign grouped by candidate bug type.
    Report {
        #[arg(long)]
        out_dir: PathBuf,
        /// Triage sidecar; defaults to triage.jsonl in the output directory.
        #[arg(long)]
        triage: Option<PathBuf>,
        /// Print the statistics as JSON instead of the digest.
        #[arg(long)]
        json: bool,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum StyleArg {
    Sequential,
    ClassBased,
}

impl From<StyleArg> for SeedStyle {
    fn from(s: StyleArg) -> Self {
        match s {
            StyleArg::Sequential => SeedStyle::Sequential,
            StyleArg::ClassBased => SeedStyle::ClassBased,
        }
    }
}

#[derive(Args)]
struct FuzzArgs {
    /// Campaign config file (TOML); flags override its values.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Seed program; repeat for several seeds.
    #[arg(long)]
    seed: Vec<PathBuf>,
    /// Seed manifest, paired with `--seed` by position.
    #[arg(long)]
    manifest: Vec<PathBuf>,
    #[arg(long)]
    kb_dir: Option<PathBuf>,
    #[arg(long)]
    times_mt: Option<usize>,
    #[arg(long)]
    prune_ratio: Option<f64>,
    /// Runner command; `{test}` and `{manifest}` are substituted.
    #[arg(long)]
    runner_cmd: Option<String>,
    #[arg(long)]
    timeout_secs: Option<f64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    rng_seed: Option<u64>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
    #[arg(long)]
    shared_session: bool,
    #[arg(long)]
    bc_cap: Option<usize>,
    #[arg(long)]
    ar_weight: Option<f64>,
    /// Table-driven fake runner (JSON) used instead of a runner command.
    #[arg(long)]
    scripted_runner: Option<PathBuf>,
}

impl FuzzArgs {
    fn config(self) -> Result<CampaignConfig, CampaignError> {
        let mut cfg = match &self.config {
            Some(p) => CampaignConfig::load(p)?,
            None => CampaignConfig::default(),
        };
        if !self.seed.is_empty() {
            if self.manifest.len() > self.seed.len() {
                return Err(CampaignError::Config("more --manifest than --seed values".into()));
            }
            cfg.seeds = self
                .seed
                .iter()
                .enumerate()
                .map(|(i, p)| SeedEntry { path: p.clone(), manifest: self.manifest.get(i).cloned(), style: None })
                .collect();
        } else if !self.manifest.is_empty() {
            return Err(CampaignError::Config("--manifest needs a matching --seed".into()));
        }
        macro_rules! set {
            ($field:ident) => {
                if let Some(v) = self.$field {
                    cfg.$field = v;
                }
            };
        }
        set!(kb_dir);
        set!(times_mt);
        set!(prune_ratio);
        set!(workers);
        set!(rng_seed);
        set!(out_dir);
        set!(bc_cap);
        if let Some(w) = self.ar_weight {
            cfg.operators.ar_weight = w;
        }
        if self.shared_session {
            cfg.shared_session = true;
        }
        if let Some(s) = self.scripted_runner {
            cfg.scripted_runner = Some(s);
        }
        if let Some(c) = self.runner_cmd {
            let mut r = cfg.runner.take().unwrap_or_else(|| RunnerConfig::new(""));
            r.command = c;
            cfg.runner = Some(r);
        }
        if let Some(t) = self.timeout_secs {
            match cfg.runner.as_mut() {
                Some(r) => r.timeout_secs = t,
                None => return Err(CampaignError::Config("--timeout-secs needs a runner command".into())),
            }
        }
        Ok(cfg)
    }
}

fn run(cli: Cli) -> Result<(), CampaignError> {
    match cli.command {
        Command::Fuzz(args) => {
            let cfg = args.config()?;
            let out = cmd_fuzz(&cfg)?;
            let t = &out.stats.total;
            println!(
                "tests: {}  avg wall: {:.3}s  violations: {}  reports: {}  output: {}",
                t.tests,
                t.avg_wall_time,
                t.violations,
                t.reports,
                cfg.out_dir.display()
            );
            for (ty, n) in t.by_type.iter().filter(|(_, n)| **n > 0) {
                println!("  {ty}: {n}");
            }
        }
        Command::Disassemble { seed, kb_dir, manifest, style } => {
            let entry = SeedEntry { path: seed, manifest, style: style.map(Into::into) };
            print!("{}", cmd_disassemble(&entry, &kb_dir)?);
        }
        Command::Similarity { kb_dir, api, top } => print!("{}", cmd_similarity(&kb_dir, api.as_deref(), top)?),
        Command::Report { out_dir, triage, json } => {
            let (digest, stats) = cmd_report(&out_dir, triage.as_deref())?;
            if json {
                println!("{}", serde_json::to_string_pretty(&stats).expect("stats serialize"));
            } else {
                print!("{digest}");
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("blockforge: {e}");
            ExitCode::FAILURE
        }
    }
}
