//! Command-line entry points: `train`, `sample`, `verify`.
//!
//! Configuration resolves in precedence order: command-line flag, then
//! config-file value (`--config`, line-oriented `key = value`, unknown keys
//! are errors), then built-in default. The resolved configuration is echoed
//! to `<out>/config-resolved.txt` before training starts.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::checkpoint;
use crate::data;
use crate::grid;
use crate::networks::resolution;
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::{self, Trainer, TrainingConfig};
use crate::verify::{self, Fault};

const CLI_SAMPLE_TAG: u64 = 0x434c_4953; // "CLIS"

const USAGE: &str = "\
progan - progressive Wasserstein GAN trainer and sampler

USAGE:
    progan train  --data <dir> [--out <dir>] [options]
    progan sample --ckpt <file> [--out <png>] [options]
    progan verify [--json] [--inject-fault <name>]

TRAIN OPTIONS:
    --data <dir>           directory of 8-bit RGB PNG/JPEG images (required)
    --out <dir>            output directory (default progan-out)
    --config <file>        key = value config file (unknown keys are errors)
    --ckpt <file>          resume from a checkpoint
    --epochs <n>           total epochs (default 100)
    --batch <n>            batch size (default 16)
    --workers <n>          data-loading workers (default 8)
    --latent-dim <n>       latent dimension (default 256)
    --max-res <n>          final resolution: 4, 8, 16, 32 or 64 (default 64)
    --seed <n>             run seed (default 0)
    --lr <x>               learning rate (default 0.001)
    --lambda-gp <x>        gradient-penalty weight (default 10)
    --n-critic <n>         critic updates per generator update (default 1)
    --max-steps <n>        stop after this many steps
    --deterministic        single-producer data loading (reproducible runs)

SAMPLE OPTIONS:
    --ckpt <file>          checkpoint to sample from (required)
    --out <png>            output image path (default samples.png)
    --count <n>            number of samples (default: grid cells)
    --grid <RxC>           grid layout (default 4x4)
    --seed <n>             latent seed (default 0)

VERIFY OPTIONS:
    --json                 machine-readable report
    --inject-fault <name>  deliberately break one check (pixelnorm-eps-zero)

ENVIRONMENT:
    PGAN_NUM_THREADS       caps data-loading parallelism
";

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

/// Prints to stdout, tolerating a closed pipe (e.g. `progan verify | head`).
fn print_out(text: &str) {
    use std::io::Write;
    let _ = std::io::stdout().write_all(text.as_bytes());
    let _ = std::io::stdout().flush();
}

impl CliError {
    fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    fn runtime(msg: impl std::fmt::Display) -> Self {
        CliError::Runtime(msg.to_string())
    }
}

/// Entry point; returns the process exit code.
pub fn run(args: &[String]) -> i32 {
    match dispatch(args) {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n");
            eprintln!("{USAGE}");
            2
        }
        Err(CliError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            1
        }
    }
}

fn dispatch(args: &[String]) -> Result<i32, CliError> {
    let Some(command) = args.first() else {
        return Err(CliError::usage("missing command"));
    };
    match command.as_str() {
        "train" => cmd_train(&args[1..]),
        "sample" => cmd_sample(&args[1..]),
        "verify" => cmd_verify(&args[1..]),
        "help" | "--help" | "-h" => {
            print_out(USAGE);
            Ok(0)
        }
        other => Err(CliError::usage(format!("unknown command `{other}`"))),
    }
}

const BOOL_FLAGS: &[&str] = &["deterministic", "json"];

/// Parses `--key value`, `--key=value`, and bare boolean flags.
fn parse_flags(args: &[String], allowed: &[&str]) -> Result<BTreeMap<String, String>, CliError> {
    let mut out = BTreeMap::new();
    let mut i = 0;
    while i < args.len() {
        let arg = &args[i];
        let Some(stripped) = arg.strip_prefix("--") else {
            return Err(CliError::usage(format!("unexpected argument `{arg}`")));
        };
        let (key, inline) = match stripped.split_once('=') {
            Some((k, v)) => (k.to_string(), Some(v.to_string())),
            None => (stripped.to_string(), None),
        };
        if !allowed.contains(&key.as_str()) {
            return Err(CliError::usage(format!("unknown flag `--{key}`")));
        }
        let value = if BOOL_FLAGS.contains(&key.as_str()) {
            inline.unwrap_or_else(|| "true".to_string())
        } else {
            match inline {
                Some(v) => v,
                None => {
                    i += 1;
                    args.get(i)
                        .cloned()
                        .ok_or_else(|| CliError::usage(format!("flag --{key} needs a value")))?
                }
            }
        };
        if out.insert(key.clone(), value).is_some() {
            return Err(CliError::usage(format!("flag --{key} given twice")));
        }
        i += 1;
    }
    Ok(out)
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value
        .parse()
        .map_err(|_| CliError::usage(format!("invalid value `{value}` for {key}")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(CliError::usage(format!(
            "invalid boolean `{value}` for {key}"
        ))),
    }
}

fn max_res_to_level(res: usize) -> Result<usize, CliError> {
    match res {
        4 => Ok(0),
        8 => Ok(1),
        16 => Ok(2),
        32 => Ok(3),
        64 => Ok(4),
        other => Err(CliError::usage(format!(
            "max-res must be 4, 8, 16, 32 or 64, got {other}"
        ))),
    }
}

/// Settable fields of a training run. Shared by config-file keys and
/// command-line flags so precedence is uniform.
#[derive(Debug, Default, Clone)]
struct Overrides {
    data: Option<PathBuf>,
    out: Option<PathBuf>,
    epochs: Option<u64>,
    batch: Option<usize>,
    workers: Option<usize>,
    latent_dim: Option<usize>,
    max_res: Option<usize>,
    seed: Option<u64>,
    lr: Option<f64>,
    lambda_gp: Option<f64>,
    eps_drift: Option<f64>,
    n_critic: Option<usize>,
    deterministic: Option<bool>,
    max_steps: Option<u64>,
    fade_fraction: Option<f64>,
}

impl Overrides {
    fn set(&mut self, key: &str, value: &str) -> Result<(), CliError> {
        match key {
            "data" => self.data = Some(PathBuf::from(value)),
            "out" => self.out = Some(PathBuf::from(value)),
            "epochs" => self.epochs = Some(parse(key, value)?),
            "batch" => self.batch = Some(parse(key, value)?),
            "workers" => self.workers = Some(parse(key, value)?),
            "latent-dim" | "latent_dim" => self.latent_dim = Some(parse(key, value)?),
            "max-res" | "max_res" => self.max_res = Some(parse(key, value)?),
            "seed" => self.seed = Some(parse(key, value)?),
            "lr" => self.lr = Some(parse(key, value)?),
            "lambda-gp" | "lambda_gp" => self.lambda_gp = Some(parse(key, value)?),
            "eps-drift" | "eps_drift" => self.eps_drift = Some(parse(key, value)?),
            "n-critic" | "n_critic" => self.n_critic = Some(parse(key, value)?),
            "deterministic" => self.deterministic = Some(parse_bool(key, value)?),
            "max-steps" | "max_steps" => self.max_steps = Some(parse(key, value)?),
            "fade-fraction" | "fade_fraction" => self.fade_fraction = Some(parse(key, value)?),
            other => return Err(CliError::usage(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Fields set in `top` win over `self`.
    fn layered_under(mut self, top: &Overrides) -> Overrides {
        macro_rules! take {
            ($field:ident) => {
                if top.$field.is_some() {
                    self.$field = top.$field.clone();
                }
            };
        }
        take!(data);
        take!(out);
        take!(epochs);
        take!(batch);
        take!(workers);
        take!(latent_dim);
        take!(max_res);
        take!(seed);
        take!(lr);
        take!(lambda_gp);
        take!(eps_drift);
        take!(n_critic);
        take!(deterministic);
        take!(max_steps);
        take!(fade_fraction);
        self
    }

    fn apply(&self, cfg: &mut TrainingConfig) -> Result<(), CliError> {
        if let Some(v) = self.epochs {
            cfg.total_epochs = v;
        }
        if let Some(v) = self.batch {
            cfg.batch_size = v;
        }
        if let Some(v) = self.workers {
            cfg.workers = v;
        }
        if let Some(v) = self.latent_dim {
            cfg.latent_dim = v;
        }
        if let Some(v) = self.max_res {
            cfg.max_level = max_res_to_level(v)?;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.lr {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.lambda_gp {
            cfg.lambda_gp = v;
        }
        if let Some(v) = self.eps_drift {
            cfg.eps_drift = v;
        }
        if let Some(v) = self.n_critic {
            cfg.n_critic = v;
        }
        if let Some(v) = self.deterministic {
            cfg.deterministic = v;
        }
        if let Some(v) = self.max_steps {
            cfg.max_steps = Some(v);
        }
        if let Some(v) = self.fade_fraction {
            cfg.fade_fraction = v;
        }
        Ok(())
    }
}

/// Parses a line-oriented `key = value` config file. Blank lines and lines
/// starting with `#` are ignored; unknown keys are errors.
fn parse_config_file(path: &Path) -> Result<Overrides, CliError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CliError::runtime(format!("cannot read {}: {e}", path.display())))?;
    let mut overrides = Overrides::default();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(CliError::usage(format!(
                "{}:{}: expected `key = value`",
                path.display(),
                lineno + 1
            )));
        };
        overrides
            .set(key.trim(), value.trim())
            .map_err(|e| match e {
                CliError::Usage(msg) => {
                    CliError::usage(format!("{}:{}: {msg}", path.display(), lineno + 1))
                }
                other => other,
            })?;
    }
    Ok(overrides)
}

/// Fully resolved run settings for `train`.
pub struct RunConfig {
    pub training: TrainingConfig,
    pub data_dir: PathBuf,
    pub out_dir: PathBuf,
    pub resume: Option<PathBuf>,
}

fn resolve_train_config(flags: &BTreeMap<String, String>) -> Result<RunConfig, CliError> {
    let mut flag_overrides = Overrides::default();
    for (key, value) in flags {
        if matches!(key.as_str(), "config" | "ckpt") {
            continue;
        }
        flag_overrides.set(key, value)?;
    }
    let file_overrides = match flags.get("config") {
        Some(path) => parse_config_file(Path::new(path))?,
        None => Overrides::default(),
    };
    let resolved = file_overrides.layered_under(&flag_overrides);

    let mut training = TrainingConfig::default();
    resolved.apply(&mut training)?;
    let data_dir = resolved
        .data
        .clone()
        .ok_or_else(|| CliError::usage("--data is required for train"))?;
    let out_dir = resolved
        .out
        .clone()
        .unwrap_or_else(|| PathBuf::from("progan-out"));
    Ok(RunConfig {
        training,
        data_dir,
        out_dir,
        resume: flags.get("ckpt").map(PathBuf::from),
    })
}

/// Echoes every resolved setting, in a fixed order, to the manifest file.
fn write_config_manifest(run: &RunConfig, path: &Path) -> std::io::Result<()> {
    let t = &run.training;
    let text = format!(
        "command = train\n\
         data = {}\n\
         out = {}\n\
         epochs = {}\n\
         batch = {}\n\
         workers = {}\n\
         latent_dim = {}\n\
         max_res = {}\n\
         seed = {}\n\
         lr = {}\n\
         lambda_gp = {}\n\
         eps_drift = {}\n\
         n_critic = {}\n\
         deterministic = {}\n\
         fade_fraction = {}\n\
         max_steps = {}\n\
         beta1 = {}\n\
         beta2 = {}\n\
         adam_eps = {}\n\
         checkpoint_every = {}\n\
         sample_grid = {}x{}\n",
        run.data_dir.display(),
        run.out_dir.display(),
        t.total_epochs,
        t.batch_size,
        t.workers,
        t.latent_dim,
        resolution(t.max_level),
        t.seed,
        t.learning_rate,
        t.lambda_gp,
        t.eps_drift,
        t.n_critic,
        t.deterministic,
        t.fade_fraction,
        t.max_steps.map_or("none".to_string(), |v| v.to_string()),
        t.beta1,
        t.beta2,
        t.adam_eps,
        t.checkpoint_every,
        t.sample_rows,
        t.sample_cols,
    );
    std::fs::write(path, text)
}

const TRAIN_FLAGS: &[&str] = &[
    "data",
    "out",
    "config",
    "ckpt",
    "epochs",
    "batch",
    "workers",
    "latent-dim",
    "max-res",
    "seed",
    "lr",
    "lambda-gp",
    "eps-drift",
    "n-critic",
    "max-steps",
    "fade-fraction",
    "deterministic",
];

fn cmd_train(args: &[String]) -> Result<i32, CliError> {
    let flags = parse_flags(args, TRAIN_FLAGS)?;
    let run = resolve_train_config(&flags)?;
    run.training
        .validate()
        .map_err(|e| CliError::usage(e.to_string()))?;

    std::fs::create_dir_all(&run.out_dir).map_err(CliError::runtime)?;
    write_config_manifest(&run, &run.out_dir.join("config-resolved.txt"))
        .map_err(CliError::runtime)?;

    let (index, skipped) =
        data::ingest(&run.data_dir, run.training.seed).map_err(CliError::runtime)?;
    skipped
        .write_to(&run.out_dir.join("skip-report.txt"))
        .map_err(CliError::runtime)?;
    if !skipped.entries.is_empty() {
        eprintln!(
            "skipped {} unusable files (see skip-report.txt)",
            skipped.entries.len()
        );
    }
    eprintln!(
        "training on {} images, {} epochs, final resolution {}",
        index.len(),
        run.training.total_epochs,
        resolution(run.training.max_level)
    );

    let resume = match &run.resume {
        Some(path) => Some(checkpoint::load(path).map_err(CliError::runtime)?),
        None => None,
    };
    let summary = train::run_training(run.training, &index, &run.out_dir, resume)
        .map_err(CliError::runtime)?;
    eprintln!(
        "done: {} epochs, {} steps; metrics at {}",
        summary.epochs_run,
        summary.steps_run,
        summary.metrics_path.display()
    );
    if let Some(ckpt) = summary.final_checkpoint {
        eprintln!("final checkpoint: {}", ckpt.display());
    }
    Ok(0)
}

const SAMPLE_FLAGS: &[&str] = &["ckpt", "out", "count", "grid", "seed"];

fn parse_grid(value: &str) -> Result<(usize, usize), CliError> {
    let (r, c) = value
        .split_once(['x', 'X'])
        .ok_or_else(|| CliError::usage(format!("grid must look like 4x4, got `{value}`")))?;
    let rows = parse("grid", r)?;
    let cols = parse("grid", c)?;
    if rows == 0 || cols == 0 {
        return Err(CliError::usage("grid must be nonempty"));
    }
    Ok((rows, cols))
}

fn cmd_sample(args: &[String]) -> Result<i32, CliError> {
    let flags = parse_flags(args, SAMPLE_FLAGS)?;
    let ckpt_path = flags
        .get("ckpt")
        .ok_or_else(|| CliError::usage("--ckpt is required for sample"))?;
    let out = flags
        .get("out")
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from("samples.png"));
    let (rows, cols) = match flags.get("grid") {
        Some(v) => parse_grid(v)?,
        None => (4, 4),
    };
    let count: usize = match flags.get("count") {
        Some(v) => parse("count", v)?,
        None => rows * cols,
    };
    if count > rows * cols {
        return Err(CliError::usage(format!(
            "count {count} exceeds grid capacity {}",
            rows * cols
        )));
    }
    let seed: u64 = match flags.get("seed") {
        Some(v) => parse("seed", v)?,
        None => 0,
    };

    let ckpt = checkpoint::load(Path::new(ckpt_path)).map_err(CliError::runtime)?;
    let phase = ckpt.phase;
    let generator = Trainer::generator_from_checkpoint(&ckpt).map_err(CliError::runtime)?;

    let mut rng = Rng::derive(seed, &[CLI_SAMPLE_TAG]);
    let dim = ckpt.config.latent_dim;
    let z = Tensor::from_fn(vec![count, 1, 1, dim], |_| rng.normal_f64() as f32);

    let tape = crate::tensor::Tape::new();
    let zv = tape.leaf_owned(z, false).map_err(CliError::runtime)?;
    let batch = generator
        .bind(&tape, false)
        .and_then(|b| b.forward(&zv, &phase))
        .map_err(CliError::runtime)?
        .to_tensor();
    let tiles: Vec<Vec<u8>> = (0..count)
        .map(|i| grid::image_to_u8(&grid::batch_image(&batch, i)))
        .collect();
    grid::write_png_grid(&tiles, phase.resolution(), rows, cols, &out)
        .map_err(CliError::runtime)?;
    eprintln!(
        "wrote {count} samples at {0}x{0} to {1}",
        phase.resolution(),
        out.display()
    );
    Ok(0)
}

const VERIFY_FLAGS: &[&str] = &["json", "inject-fault"];

fn cmd_verify(args: &[String]) -> Result<i32, CliError> {
    let flags = parse_flags(args, VERIFY_FLAGS)?;
    let fault = match flags.get("inject-fault") {
        Some(name) => Some(
            Fault::parse(name)
                .ok_or_else(|| CliError::usage(format!("unknown fault `{name}`")))?,
        ),
        None => None,
    };
    let results = verify::run_checks(fault);
    let all_passed = results.iter().all(|r| r.passed);
    if flags.contains_key("json") {
        let rendered = serde_json::to_string_pretty(&results).map_err(CliError::runtime)?;
        print_out(&rendered);
        print_out("\n");
    } else {
        let width = results.iter().map(|r| r.name.len()).max().unwrap_or(0);
        let mut table = String::new();
        for r in &results {
            table.push_str(&format!(
                "{:<width$}  {}  {}\n",
                r.name,
                if r.passed { "PASS" } else { "FAIL" },
                r.detail,
            ));
        }
        table.push_str(&format!(
            "{} of {} checks passed\n",
            results.iter().filter(|r| r.passed).count(),
            results.len()
        ));
        print_out(&table);
    }
    Ok(if all_passed { 0 } else { 1 })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn s(v: &[&str]) -> Vec<String> {
        v.iter().map(|x| x.to_string()).collect()
    }

    #[test]
    fn unknown_flags_and_commands_are_usage_errors() {
        assert!(matches!(
            dispatch(&s(&["frobnicate"])),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(
            dispatch(&s(&["train", "--bogus", "1"])),
            Err(CliError::Usage(_))
        ));
        assert!(matches!(
            dispatch(&s(&["train", "--epochs"])),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn train_without_data_is_a_usage_error() {
        assert!(matches!(
            dispatch(&s(&["train", "--out", "/tmp/x"])),
            Err(CliError::Usage(_))
        ));
    }

    #[test]
    fn grid_parsing() {
        assert_eq!(parse_grid("4x4").unwrap(), (4, 4));
        assert_eq!(parse_grid("2X8").unwrap(), (2, 8));
        assert!(parse_grid("4by4").is_err());
        assert!(parse_grid("0x4").is_err());
    }

    #[test]
    fn max_res_mapping() {
        assert_eq!(max_res_to_level(4).unwrap(), 0);
        assert_eq!(max_res_to_level(64).unwrap(), 4);
        assert!(max_res_to_level(48).is_err());
    }

    #[test]
    fn config_file_rejects_unknown_keys() {
        let dir = std::env::temp_dir().join(format!("progan-cli-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("bad.cfg");
        std::fs::write(&path, "epochs = 10\nwat = 9\n").unwrap();
        assert!(matches!(parse_config_file(&path), Err(CliError::Usage(_))));
        std::fs::write(&path, "epochs = 10\n# comment\n\nbatch = 4\n").unwrap();
        let o = parse_config_file(&path).unwrap();
        assert_eq!(o.epochs, Some(10));
        assert_eq!(o.batch, Some(4));
    }

    proptest! {
        /// flag > file > default, for every field and any subset of overrides
        #[test]
        fn precedence_holds_for_any_override_subset(
            in_file in proptest::collection::vec(any::<bool>(), 8),
            in_flag in proptest::collection::vec(any::<bool>(), 8),
        ) {
            let fields: [(&str, &str, &str); 8] = [
                ("epochs", "50", "10"),
                ("batch", "4", "8"),
                ("workers", "2", "3"),
                ("latent-dim", "32", "64"),
                ("seed", "5", "9"),
                ("lr", "0.5", "0.25"),
                ("n-critic", "2", "4"),
                ("fade-fraction", "0.25", "0.75"),
            ];
            let mut file_overrides = Overrides::default();
            let mut flag_overrides = Overrides::default();
            for (i, (key, fv, gv)) in fields.iter().enumerate() {
                if in_file[i] {
                    file_overrides.set(key, fv).unwrap();
                }
                if in_flag[i] {
                    flag_overrides.set(key, gv).unwrap();
                }
            }
            let mut cfg = TrainingConfig::default();
            file_overrides.layered_under(&flag_overrides).apply(&mut cfg).unwrap();
            let defaults = TrainingConfig::default();

            let got: [String; 8] = [
                cfg.total_epochs.to_string(),
                cfg.batch_size.to_string(),
                cfg.workers.to_string(),
                cfg.latent_dim.to_string(),
                cfg.seed.to_string(),
                cfg.learning_rate.to_string(),
                cfg.n_critic.to_string(),
                cfg.fade_fraction.to_string(),
            ];
            let default_vals: [String; 8] = [
                defaults.total_epochs.to_string(),
                defaults.batch_size.to_string(),
                defaults.workers.to_string(),
                defaults.latent_dim.to_string(),
                defaults.seed.to_string(),
                defaults.learning_rate.to_string(),
                defaults.n_critic.to_string(),
                defaults.fade_fraction.to_string(),
            ];
            for (i, (_, fv, gv)) in fields.iter().enumerate() {
                let want = if in_flag[i] {
                    gv.to_string()
                } else if in_file[i] {
                    fv.to_string()
                } else {
                    default_vals[i].clone()
                };
                prop_assert_eq!(&got[i], &want);
            }
        }
    }
}
