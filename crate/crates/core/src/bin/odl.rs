use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::str::FromStr;
use std::time::Instant;

use anyhow::Context;
use clap::{Args, Parser, Subcommand};

use odl_core::ccrnet::CcrnetModel;
use odl_core::cenet::CenetModel;
use odl_core::harness::training::{train_ccrnet, train_cenet};
use odl_core::harness::{
    emit_results, generate_dataset, run_ber_sweep, run_mse_sweep, write_plot_script, BerScheme, ExperimentConfig,
    Link, ModelBank, MseScheme, Scenario,
};
use odl_core::selftest::run_selftest;

#[derive(Parser)]
#[command(name = "odl", about = "OFDM channel estimation and signal recovery experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a binary dataset of (H, X, Y) frames.
    GenData {
        #[command(flatten)]
        common: Common,
        /// Records to generate, split evenly over --snr.
        #[arg(long, default_value_t = 1000)]
        count: usize,
    },
    /// Train a CENet on frames at the --snr mix.
    TrainCenet {
        #[command(flatten)]
        common: Common,
        /// Checkpoint name; writes cenet_<name>.odlm.
        #[arg(long, default_value = "mixed")]
        name: String,
    },
    /// Train the CCRNet GAN conditioned on a CENet estimate.
    TrainCcrnet {
        #[command(flatten)]
        common: Common,
        /// Condition on the true channel instead of a CENet estimate.
        #[arg(long)]
        perfect_condition: bool,
    },
    /// Channel-estimation MSE sweep.
    SweepMse {
        #[command(flatten)]
        common: Common,
        /// Comma-separated schemes, e.g. LS+GI,MMSE+GI,CENet:mixed.
        #[arg(long)]
        schemes: Option<String>,
    },
    /// Detection BER sweep.
    SweepBer {
        #[command(flatten)]
        common: Common,
        /// Comma-separated schemes, e.g. LS+ZF,CENet+ZF,CENet+RZF.
        #[arg(long)]
        schemes: Option<String>,
    },
    /// Run the oracle and invariant suite.
    Selftest {
        /// Also write the report to this file.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Args)]
struct Common {
    #[arg(long)]
    scenario: Option<Scenario>,
    /// Comma-separated SNR list in dB.
    #[arg(long, value_delimiter = ',')]
    snr: Option<Vec<f64>>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long = "mod")]
    modulation: Option<usize>,
    /// TOML config; its entries override the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// CENet checkpoint as NAME=PATH (repeatable).
    #[arg(long = "cenet", value_parser = parse_named_path)]
    cenet: Vec<(String, PathBuf)>,
    /// CCRNet checkpoint.
    #[arg(long = "ccrnet")]
    ccrnet: Option<PathBuf>,
    #[arg(long)]
    train_samples: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
}

fn parse_named_path(s: &str) -> Result<(String, PathBuf), String> {
    let (name, path) = s.split_once('=').ok_or_else(|| format!("expected NAME=PATH, got {s}"))?;
    Ok((name.to_string(), PathBuf::from(path)))
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl Common {
    /// Defaults, then flags, then the config file on top.
    fn experiment(&self) -> anyhow::Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::default();
        if let Some(s) = self.scenario {
            cfg.scenario = s;
        }
        if let Some(snr) = &self.snr {
            cfg.snr_db = snr.clone();
            cfg.train_snr_db = snr.clone();
        }
        if let Some(f) = self.frames {
            cfg.frames = f;
        }
        if let Some(s) = self.seed {
            cfg.seed = s;
        }
        if let Some(m) = self.modulation {
            cfg.modulation = m;
        }
        for (name, path) in &self.cenet {
            cfg.models.cenet.insert(name.clone(), path.clone());
        }
        if let Some(p) = &self.ccrnet {
            cfg.models.ccrnet = Some(p.clone());
        }
        if let Some(n) = self.train_samples {
            cfg.train_samples = n;
        }
        if let Some(e) = self.epochs {
            cfg.cenet_train.epochs = e;
        }
        if let Some(s) = self.steps {
            cfg.ccrnet_train.steps = s;
        }
        if let Some(lr) = self.lr {
            cfg.cenet_train.lr = lr;
            cfg.ccrnet_train.lr = lr;
        }
        if let Some(path) = &self.config {
            let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            let over: toml::Table = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
            let mut base = toml::Table::try_from(&cfg)?;
            merge(&mut base, over);
            cfg = base.try_into().with_context(|| format!("config {}", path.display()))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn out_dir(&self) -> anyhow::Result<&Path> {
        fs::create_dir_all(&self.out).with_context(|| format!("creating {}", self.out.display()))?;
        Ok(&self.out)
    }
}

fn load_models(cfg: &ExperimentConfig, need_ccrnet: bool) -> anyhow::Result<ModelBank> {
    let mut bank = ModelBank::default();
    for (name, path) in &cfg.models.cenet {
        bank.cenet.insert(name.clone(), CenetModel::load(path)?);
    }
    if need_ccrnet {
        if let Some(p) = &cfg.models.ccrnet {
            bank.ccrnet = Some(CcrnetModel::load(p)?);
        }
    }
    Ok(bank)
}

fn parse_list<T: FromStr<Err = odl_core::Error>>(s: Option<&str>, default: &[String]) -> anyhow::Result<Vec<T>> {
    let items: Vec<String> = match s {
        Some(s) => s.split(',').map(|x| x.trim().to_string()).filter(|x| !x.is_empty()).collect(),
        None => default.to_vec(),
    };
    Ok(items.iter().map(|x| x.parse()).collect::<Result<_, _>>()?)
}

fn write_sweep(out: &Path, stem: &str, title: &str, result: &odl_core::harness::SweepResult) -> anyhow::Result<()> {
    let csv = format!("{stem}.csv");
    emit_results(result, out.join(&csv))?;
    write_plot_script(result, &csv, title, out.join(format!("{stem}.gp")))?;
    print!("{}", result.to_csv_string());
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<bool> {
    match cli.command {
        Command::GenData { common, count } => {
            let cfg = common.experiment()?;
            let link = Link::from_experiment(&cfg)?;
            let path = common.out_dir()?.join(format!("{}_{}.odld", cfg.scenario, cfg.seed));
            let h = generate_dataset(&path, &link, count, &cfg.train_snr_db, cfg.seed)?;
            println!("wrote {} records to {}", h.count, path.display());
        }
        Command::TrainCenet { common, name } => {
            let cfg = common.experiment()?;
            let started = Instant::now();
            let (model, log) = train_cenet(&cfg, &cfg.train_snr_db)?;
            let out = common.out_dir()?;
            let path = out.join(format!("cenet_{name}.odlm"));
            model.save(&path)?;
            let mut w = BufWriter::new(File::create(out.join(format!("cenet_{name}_log.csv")))?);
            log.write_csv(&mut w)?;
            for e in &log.epochs {
                println!("epoch {} train_loss {:.6e} val_mse {:.6e}", e.epoch, e.train_loss, e.val_mse);
            }
            println!("saved {} after {:.1} s", path.display(), started.elapsed().as_secs_f64());
        }
        Command::TrainCcrnet {
            common,
            perfect_condition,
        } => {
            let cfg = common.experiment()?;
            let cenet = if perfect_condition {
                None
            } else {
                let bank = load_models(&cfg, false)?;
                Some(bank.cenet(&cfg.ber_cenet)?.clone())
            };
            let started = Instant::now();
            let (model, log) = train_ccrnet(&cfg, cenet.as_ref(), &cfg.train_snr_db)?;
            let out = common.out_dir()?;
            let path = out.join("ccrnet.odlm");
            model.save(&path)?;
            let mut w = BufWriter::new(File::create(out.join("ccrnet_log.csv"))?);
            log.write_csv(&mut w)?;
            if let Some((s, l)) = log.steps.last() {
                println!("step {s} d_loss {:.4e} g_adv {:.4e} g_rec {:.4e}", l.d_loss, l.g_adv, l.g_rec);
            }
            println!("saved {} after {:.1} s", path.display(), started.elapsed().as_secs_f64());
        }
        Command::SweepMse { common, schemes } => {
            let cfg = common.experiment()?;
            let schemes: Vec<MseScheme> = parse_list(schemes.as_deref(), &cfg.mse_schemes)?;
            let bank = load_models(&cfg, false)?;
            let r = run_mse_sweep(&cfg, &schemes, &bank)?;
            write_sweep(common.out_dir()?, "mse", &format!("Channel MSE, {}", cfg.scenario), &r)?;
        }
        Command::SweepBer { common, schemes } => {
            let cfg = common.experiment()?;
            let schemes: Vec<BerScheme> = parse_list(schemes.as_deref(), &cfg.ber_schemes)?;
            let need = schemes.iter().any(|s| matches!(s, BerScheme::CenetCcrnet));
            let bank = load_models(&cfg, need)?;
            let r = run_ber_sweep(&cfg, &schemes, &bank)?;
            write_sweep(common.out_dir()?, "ber", &format!("BER, {}, {}-QAM", cfg.scenario, cfg.modulation), &r)?;
        }
        Command::Selftest { out } => {
            let report = run_selftest();
            let text = report.to_text();
            print!("{text}");
            if let Some(p) = out {
                fs::write(&p, &text).with_context(|| format!("writing {}", p.display()))?;
            }
            return Ok(report.passed());
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
