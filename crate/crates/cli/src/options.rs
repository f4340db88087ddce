//! Experiment options. Every flag has a config-file twin with the same name
//! (`k-frac` or `k_frac`); values given on the command line win.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::CliError;

macro_rules! options {
    ($( $(#[$meta:meta])* $field:ident : $ty:ty = $default:expr ),* $(,)?) => {
        #[derive(clap::Args, Clone, Debug, Default, PartialEq)]
        pub struct Options {
            $( $(#[$meta])* pub $field: Option<$ty>, )*
        }

        impl Options {
            pub fn set(&mut self, key: &str, value: &str) -> Result<(), String> {
                match key.replace('-', "_").as_str() {
                    $( stringify!($field) => {
                        self.$field = Some(value.parse::<$ty>().map_err(|e| format!("`{key}`: {e}"))?);
                    } )*
                    _ => return Err(format!("unknown config key `{key}`")),
                }
                Ok(())
            }

            /// Fields set in `self`, falling back to `base`.
            pub fn overlay(self, base: Options) -> Options {
                Options { $( $field: self.$field.or(base.$field), )* }
            }

            /// Built-in defaults; keys without a default stay unset.
            pub fn defaults() -> Options {
                Options { $( $field: $default, )* }
            }

            /// `key = value` lines for every set field, loadable with `--config`.
            pub fn to_config_text(&self) -> String {
                let mut out = String::new();
                $( if let Some(v) = &self.$field {
                    writeln!(out, "{} = {}", stringify!($field), v).unwrap();
                } )*
                out
            }
        }
    };
}

options! {
    /// Random seed for generation, splitting, training and evaluation.
    #[arg(long, global = true)]
    seed: u64 = Some(0),
    /// Output directory.
    #[arg(long, global = true)]
    out: String = Some("out".into()),
    /// Number of actors; 1 trains serially.
    #[arg(long, global = true)]
    actors: usize = Some(20),
    /// Run the actors in turn on one thread (reproducible).
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")]
    sync: bool = Some(false),
    /// Save a checkpoint every C learner updates (0 disables).
    #[arg(long, global = true)]
    checkpoint_every: u64 = Some(500),
    /// Write the first rerouting LP of an evaluation in CPLEX LP format.
    #[arg(long, global = true)]
    dump_lp: String = None,

    /// Topology file.
    #[arg(long, global = true)]
    topology: String = None,
    /// Traffic-matrix file; when absent, matrices are generated.
    #[arg(long, global = true)]
    tm: String = None,
    /// Synthetic traffic model: exponential or uniform.
    #[arg(long, global = true)]
    model: String = Some("exponential".into()),
    /// Number of matrices to generate.
    #[arg(long, global = true)]
    count: usize = Some(50),
    /// ECMP maximum utilization of generated matrices.
    #[arg(long, global = true)]
    target_util: f64 = Some(0.9),
    /// Share of matrices used for training; 1 trains and tests on all.
    #[arg(long, global = true)]
    train_frac: f64 = Some(0.7),

    /// Number of critical flows; takes precedence over k-frac.
    #[arg(long, global = true)]
    k: usize = None,
    /// Critical flows as a share of N(N-1), in (0, 1].
    #[arg(long, global = true)]
    k_frac: f64 = Some(0.1),

    #[arg(long, global = true)]
    iterations: u64 = Some(10_000),
    #[arg(long, global = true)]
    alpha: f64 = Some(0.001),
    #[arg(long, global = true)]
    alpha_min: f64 = Some(0.0001),
    #[arg(long, global = true)]
    decay_every: u64 = Some(500),
    #[arg(long, global = true)]
    decay_base: f64 = Some(0.96),
    /// Entropy weight.
    #[arg(long, global = true)]
    beta: f64 = Some(0.1),
    #[arg(long, global = true)]
    batch_size: usize = Some(20),
    /// Convolution filters and hidden units.
    #[arg(long, global = true)]
    width: usize = Some(128),
    /// Write measured wall time into the training log (false writes 0, so
    /// reruns produce identical files).
    #[arg(long, global = true)]
    wall_time: bool = Some(true),
    /// Continue serial training from this checkpoint.
    #[arg(long, global = true)]
    resume: String = None,

    /// Policy checkpoint used by the `policy` method.
    #[arg(long, global = true)]
    checkpoint: String = None,
    /// Comma-separated selection methods.
    #[arg(long, global = true)]
    methods: String = None,

    /// Comma-separated K fractions for sweep-k.
    #[arg(long, global = true)]
    fractions: String = Some("0.05,0.1,0.15,0.2".into()),
    /// Selector for sweep-k: auto, brute_force or policy.
    #[arg(long, global = true)]
    sweep_method: String = Some("auto".into()),

    /// Comma-separated learning rates for sweep-hyper.
    #[arg(long, global = true)]
    grid_alpha: String = Some("0.01,0.001,0.0001".into()),
    #[arg(long, global = true)]
    grid_width: String = Some("64,128,256".into()),
    #[arg(long, global = true)]
    grid_beta: String = Some("0.1,0.01".into()),
    /// Training iterations per sweep cell.
    #[arg(long, global = true)]
    sweep_iterations: u64 = Some(500),
}

/// Parses `key = value` lines; `#` starts a comment.
pub fn parse_config(text: &str) -> Result<Options, CliError> {
    let mut opts = Options::default();
    for (i, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| CliError::Usage(format!("config line {}: expected `key = value`", i + 1)))?;
        opts.set(key.trim(), value.trim())
            .map_err(|e| CliError::Usage(format!("config line {}: {e}", i + 1)))?;
    }
    Ok(opts)
}

pub fn load_config(path: &Path) -> Result<Options, CliError> {
    let text =
        fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    parse_config(&text)
}

/// Splits a comma list and parses each item.
pub fn parse_list<T: std::str::FromStr>(key: &str, s: &str) -> Result<Vec<T>, CliError>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|e| CliError::Usage(format!("`{key}`: bad item `{t}`: {e}"))))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_round_trip() {
        let opts = parse_config("seed = 7\nk-frac=0.2 # comment\n\nsync = true\n").unwrap();
        assert_eq!(opts.seed, Some(7));
        assert_eq!(opts.k_frac, Some(0.2));
        assert_eq!(opts.sync, Some(true));
        assert_eq!(parse_config(&opts.to_config_text()).unwrap(), opts);
    }

    #[test]
    fn cli_wins_over_config() {
        let file = parse_config("seed = 7\nwidth = 64\n").unwrap();
        let cli = Options {
            seed: Some(3),
            ..Options::default()
        };
        let merged = cli.overlay(file).overlay(Options::defaults());
        assert_eq!(merged.seed, Some(3));
        assert_eq!(merged.width, Some(64));
        assert_eq!(merged.batch_size, Some(20));
    }

    #[test]
    fn bad_lines() {
        assert!(parse_config("seed 7").is_err());
        assert!(parse_config("nope = 1").is_err());
        assert!(parse_config("seed = x").is_err());
    }
}
