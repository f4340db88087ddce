use std::fs;
use std::path::{Path, PathBuf};

use critflow_core::selectors::SelectionMethod;
use critflow_core::traffic::{generate_tms, load_tms, split_dataset};
use critflow_core::trainer::TrainerConfig;
use critflow_core::{Dataset, Topology, TrafficMatrix, TrafficModel};
use log::info;

use crate::error::CliError;
use crate::options::{parse_list, Options};

/// Round-half-up of `frac · flows`, at least 1.
pub fn resolve_k(frac: f64, flows: usize) -> Result<usize, CliError> {
    if !(frac > 0.0 && frac <= 1.0) {
        return Err(CliError::Usage(format!("k fraction {frac} not in (0, 1]")));
    }
    // The nudge keeps products like 0.15 · 20 = 3.0000000000000004 exact.
    let k = (frac * flows as f64 + 0.5 + 1e-9).floor() as usize;
    Ok(k.clamp(1, flows))
}

/// Fully resolved options of one command.
pub struct Experiment {
    pub opts: Options,
}

macro_rules! get {
    ($self:ident . $field:ident) => {
        $self.opts.$field.clone().expect(concat!(stringify!($field), " has a default"))
    };
}

impl Experiment {
    /// Merges command-line options over the config file over the defaults.
    pub fn new(cli: Options, file: Option<Options>) -> Experiment {
        let opts = cli.overlay(file.unwrap_or_default()).overlay(Options::defaults());
        Experiment { opts }
    }

    pub fn seed(&self) -> u64 {
        get!(self.seed)
    }

    pub fn out(&self) -> PathBuf {
        PathBuf::from(get!(self.out))
    }

    /// Creates the output directory and echoes the resolved options into it.
    pub fn prepare_out(&self) -> Result<PathBuf, CliError> {
        let out = self.out();
        fs::create_dir_all(&out).map_err(|e| CliError::Runtime(format!("cannot create {}: {e}", out.display())))?;
        write_file(&out.join("config.txt"), &self.opts.to_config_text())?;
        Ok(out)
    }

    pub fn topology(&self) -> Result<Topology, CliError> {
        let path = self
            .opts
            .topology
            .as_ref()
            .ok_or_else(|| CliError::Usage("missing --topology".into()))?;
        Topology::load(path).map_err(|e| CliError::Runtime(format!("{path}: {e}")))
    }

    pub fn model(&self) -> Result<TrafficModel, CliError> {
        get!(self.model).parse().map_err(|e| CliError::Usage(format!("{e}")))
    }

    pub fn generate(&self, topo: &Topology) -> Result<Vec<TrafficMatrix>, CliError> {
        let target = get!(self.target_util);
        if !(target > 0.0 && target <= 1.0) {
            return Err(CliError::Usage(format!("target-util {target} not in (0, 1]")));
        }
        let count = get!(self.count);
        if count == 0 {
            return Err(CliError::Usage("count must be at least 1".into()));
        }
        generate_tms(topo, self.model()?, count, target, self.seed()).map_err(CliError::runtime)
    }

    /// Matrices from `--tm`, or generated ones.
    pub fn matrices(&self, topo: &Topology) -> Result<Vec<TrafficMatrix>, CliError> {
        match &self.opts.tm {
            Some(path) => {
                let tms = load_tms(path, topo.node_count()).map_err(|e| CliError::Runtime(format!("{path}: {e}")))?;
                if tms.is_empty() {
                    return Err(CliError::Runtime(format!("{path}: no traffic matrices")));
                }
                Ok(tms)
            }
            None => {
                info!("generating {} {} matrices", get!(self.count), get!(self.model));
                self.generate(topo)
            }
        }
    }

    /// Train/test split; a train fraction of 1 (or a single matrix) uses
    /// every matrix for both.
    pub fn dataset(&self, topo: &Topology) -> Result<Dataset, CliError> {
        let tms = self.matrices(topo)?;
        let frac = get!(self.train_frac);
        if !(frac > 0.0 && frac <= 1.0) {
            return Err(CliError::Usage(format!("train-frac {frac} not in (0, 1]")));
        }
        if frac == 1.0 || tms.len() < 2 {
            return Ok(Dataset::all_train(tms));
        }
        split_dataset(tms, frac, self.seed()).map_err(CliError::runtime)
    }

    pub fn k(&self, topo: &Topology) -> Result<usize, CliError> {
        let flows = topo.flow_count();
        match self.opts.k {
            Some(k) if k == 0 || k > flows => Err(CliError::Usage(format!("k = {k} not in [1, {flows}]"))),
            Some(k) => Ok(k),
            None => resolve_k(get!(self.k_frac), flows),
        }
    }

    pub fn fractions(&self) -> Result<Vec<f64>, CliError> {
        let fr: Vec<f64> = parse_list("fractions", &get!(self.fractions))?;
        if fr.is_empty() {
            return Err(CliError::Usage("fractions list is empty".into()));
        }
        if let Some(bad) = fr.iter().find(|f| !(**f > 0.0 && **f <= 1.0)) {
            return Err(CliError::Usage(format!("k fraction {bad} not in (0, 1]")));
        }
        Ok(fr)
    }

    pub fn trainer_config(&self, k: usize) -> Result<TrainerConfig, CliError> {
        let config = TrainerConfig {
            alpha0: get!(self.alpha),
            decay_every: get!(self.decay_every),
            decay_base: get!(self.decay_base),
            alpha_min: get!(self.alpha_min),
            beta: get!(self.beta),
            batch_size: get!(self.batch_size),
            k,
            actor_count: get!(self.actors),
            total_iterations: get!(self.iterations),
            seed: self.seed(),
            width: get!(self.width),
            sync: get!(self.sync),
        };
        config.validate().map_err(|e| CliError::Usage(e.to_string()))?;
        Ok(config)
    }

    /// Requested methods; by default the heuristics plus the policy when a
    /// checkpoint is given.
    pub fn methods(&self) -> Result<Vec<SelectionMethod>, CliError> {
        let methods = match &self.opts.methods {
            Some(list) => parse_list::<SelectionMethod>("methods", list)?,
            None => {
                let mut m = vec![
                    SelectionMethod::Ecmp,
                    SelectionMethod::TopK,
                    SelectionMethod::TopKCritical,
                    SelectionMethod::Random,
                ];
                if self.opts.checkpoint.is_some() {
                    m.insert(1, SelectionMethod::Policy);
                }
                m
            }
        };
        if methods.is_empty() {
            return Err(CliError::Usage("methods list is empty".into()));
        }
        if methods.contains(&SelectionMethod::Policy) && self.opts.checkpoint.is_none() {
            return Err(CliError::Usage(
                "method `policy` needs a trained policy: pass --checkpoint <file> (written by `critflow train`)".into(),
            ));
        }
        Ok(methods)
    }

    pub fn checkpoint_every(&self) -> u64 {
        get!(self.checkpoint_every)
    }

    pub fn wall_time(&self) -> bool {
        get!(self.wall_time)
    }

    pub fn sweep_method(&self) -> String {
        get!(self.sweep_method)
    }

    pub fn sweep_iterations(&self) -> u64 {
        get!(self.sweep_iterations)
    }

    pub fn grid(&self) -> Result<(Vec<f64>, Vec<usize>, Vec<f64>), CliError> {
        let alphas = parse_list("grid-alpha", &get!(self.grid_alpha))?;
        let widths = parse_list("grid-width", &get!(self.grid_width))?;
        let betas = parse_list("grid-beta", &get!(self.grid_beta))?;
        Ok((alphas, widths, betas))
    }
}

pub fn write_file(path: &Path, text: &str) -> Result<(), CliError> {
    fs::write(path, text).map_err(|e| CliError::Runtime(format!("cannot write {}: {e}", path.display())))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn k_rounding() {
        // Abilene: 10% of 132 flows.
        assert_eq!(resolve_k(0.1, 132).unwrap(), 13);
        assert_eq!(resolve_k(0.05, 132).unwrap(), 7);
        assert_eq!(resolve_k(0.15, 20).unwrap(), 3);
        assert_eq!(resolve_k(0.25, 2).unwrap(), 1);
        assert_eq!(resolve_k(0.75, 2).unwrap(), 2);
        assert_eq!(resolve_k(0.001, 20).unwrap(), 1);
        assert_eq!(resolve_k(1.0, 20).unwrap(), 20);
        assert!(resolve_k(0.0, 20).is_err());
        assert!(resolve_k(1.5, 20).is_err());
        assert!(resolve_k(f64::NAN, 20).is_err());
    }
}
