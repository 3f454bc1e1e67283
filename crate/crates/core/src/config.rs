//! Experiment configuration: a TOML file merged with command-line overrides,
//! then resolved into fully validated parameters before anything is sampled.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::limit::{DEFAULT_GRID_STEPS, MAX_DIM};
use crate::linalg::{DenseMatrix, DenseVector};
use crate::posterior::{Dataset, MixingSource};
use crate::prior::NetworkShape;
use crate::rng::{purpose_tag, RngStream};
use crate::sampling::standard_normal;
use crate::suite::{all_checks, SuiteConfig};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
#[error("{0}")]
pub struct ConfigError(pub String);

fn err(msg: impl Into<String>) -> ConfigError {
    ConfigError(msg.into())
}

/// Raw, partially specified configuration as read from a file or flags.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: Option<u64>,
    pub d: Option<usize>,
    pub n0: Option<usize>,
    pub p: Option<usize>,
    pub l: Option<usize>,
    pub n: Option<usize>,
    pub a: Option<f64>,
    pub m: Option<usize>,
    pub beta: Option<f64>,
    pub lambdas: Option<Vec<f64>>,
    pub samples: Option<usize>,
    pub mixing: Option<MixingKind>,
    pub route: Option<RouteChoice>,
    pub alpha: Option<f64>,
    pub scale: Option<f64>,
    pub output: Option<PathBuf>,
    /// Training inputs, one inner list per input coordinate (`N₀` rows of `P`).
    pub x: Option<Vec<Vec<f64>>>,
    /// Labels, one inner list per output coordinate (`D` rows of `P`).
    pub y: Option<Vec<Vec<f64>>>,
    pub x0: Option<Vec<f64>>,
    /// Subset of check ids to run.
    pub checks: Option<Vec<String>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum MixingKind {
    Finite,
    Limit,
    Nngp,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum RouteChoice {
    Direct,
    Mixture,
    Both,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|e| err(format!("config parse error: {}", e.message())))
    }

    pub fn from_file(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| err(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    /// Fields set in `other` replace those in `self`.
    pub fn merge(self, other: ExperimentConfig) -> Self {
        macro_rules! pick {
            ($($f:ident),*) => { Self { $($f: other.$f.or(self.$f)),* } };
        }
        pick!(
            seed, d, n0, p, l, n, a, m, beta, lambdas, samples, mixing, route, alpha, scale,
            output, x, y, x0, checks
        )
    }
}

/// Fully resolved configuration, echoed into every report.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ResolvedConfig {
    pub seed: u64,
    pub d: usize,
    pub n0: usize,
    pub p: usize,
    pub l: usize,
    pub n: usize,
    pub a: f64,
    pub m: usize,
    pub beta: f64,
    pub lambdas: Vec<f64>,
    pub samples: usize,
    pub mixing: MixingKind,
    pub route: RouteChoice,
    pub alpha: f64,
    pub scale: f64,
    pub output: PathBuf,
    pub x: Vec<Vec<f64>>,
    pub y: Option<Vec<Vec<f64>>>,
    pub x0: Option<Vec<f64>>,
    pub checks: Vec<String>,
}

fn rows_to_matrix(name: &str, rows: &[Vec<f64>]) -> Result<DenseMatrix, ConfigError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(err(format!(
            "`{name}` must be a nonempty rectangular list of rows"
        )));
    }
    Ok(DenseMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn check_positive(name: &str, v: f64) -> Result<(), ConfigError> {
    if v > 0.0 && v.is_finite() {
        Ok(())
    } else {
        Err(err(format!(
            "`{name}` must be positive and finite, got {v}"
        )))
    }
}

impl ResolvedConfig {
    /// Fills defaults and validates every parameter. `needs_data` demands
    /// explicit `x`, `y` and `x0`.
    pub fn resolve(raw: ExperimentConfig, needs_data: bool) -> Result<Self, ConfigError> {
        let seed = raw
            .seed
            .ok_or_else(|| err("missing required field `seed`"))?;
        let l = raw.l.unwrap_or(3);
        let n = raw.n.unwrap_or(8);
        let a = raw.a.unwrap_or(0.5);
        let m = raw.m.unwrap_or(DEFAULT_GRID_STEPS);
        let beta = raw.beta.unwrap_or(1.0);
        let alpha = raw.alpha.unwrap_or(0.001);
        let scale = raw.scale.unwrap_or(1.0);
        let samples = raw.samples.unwrap_or(1000);

        if let Some(y) = &raw.y {
            let rows = y.len();
            if raw.d.is_some_and(|d| d != rows) {
                return Err(err(format!(
                    "`d` = {} disagrees with the {rows} rows of `y`",
                    raw.d.unwrap()
                )));
            }
        }
        let d = raw.y.as_ref().map(Vec::len).or(raw.d).unwrap_or(2);

        let x = match &raw.x {
            Some(rows) => {
                let xm = rows_to_matrix("x", rows)?;
                if raw.n0.is_some_and(|v| v != xm.nrows()) || raw.p.is_some_and(|v| v != xm.ncols())
                {
                    return Err(err("`n0`/`p` disagree with the shape of `x`"));
                }
                rows.clone()
            }
            None if needs_data => return Err(err("posterior-predict needs `x`, `y` and `x0`")),
            None => {
                let (n0, p) = (raw.n0.unwrap_or(3), raw.p.unwrap_or(4));
                if n0 == 0 || p == 0 {
                    return Err(err("`n0` and `p` must be positive"));
                }
                let mut rng = RngStream::keyed(seed, purpose_tag("inputs"), 0);
                (0..n0)
                    .map(|_| (0..p).map(|_| standard_normal(&mut rng)).collect())
                    .collect()
            }
        };
        let (n0, p) = (x.len(), x[0].len());

        let lambdas = raw.lambdas.clone().unwrap_or_else(|| vec![1.0; l + 1]);
        NetworkShape::uniform(n0, d, l, n, lambdas.clone()).map_err(|e| err(e.to_string()))?;
        if d > MAX_DIM {
            return Err(err(format!("`d` must be at most {MAX_DIM}")));
        }
        if !(a >= 0.0 && a.is_finite()) {
            return Err(err(format!("`a` must be finite and nonnegative, got {a}")));
        }
        if m < 2 {
            return Err(err(format!("`m` must be at least 2, got {m}")));
        }
        if !(beta >= 0.0 && beta.is_finite()) {
            return Err(err(format!(
                "`beta` must be finite and nonnegative, got {beta}"
            )));
        }
        if !(alpha > 0.0 && alpha < 1.0) {
            return Err(err(format!("`alpha` must lie in (0, 1), got {alpha}")));
        }
        check_positive("scale", scale)?;
        if samples == 0 {
            return Err(err("`samples` must be at least 1"));
        }

        let known: Vec<&str> = all_checks().iter().map(|c| c.id).collect();
        let checks = raw.checks.clone().unwrap_or_default();
        if let Some(bad) = checks.iter().find(|c| !known.contains(&c.as_str())) {
            return Err(err(format!(
                "unknown check `{bad}`; known: {}",
                known.join(", ")
            )));
        }

        let resolved = Self {
            seed,
            d,
            n0,
            p,
            l,
            n,
            a,
            m,
            beta,
            lambdas,
            samples,
            mixing: raw.mixing.unwrap_or(MixingKind::Limit),
            route: raw.route.unwrap_or(RouteChoice::Both),
            alpha,
            scale,
            output: raw
                .output
                .clone()
                .unwrap_or_else(|| PathBuf::from("proplimit-out")),
            x,
            y: raw.y.clone(),
            x0: raw.x0.clone(),
            checks,
        };
        if needs_data {
            resolved.dataset()?;
        }
        Ok(resolved)
    }

    pub fn network(&self) -> NetworkShape {
        NetworkShape::uniform(self.n0, self.d, self.l, self.n, self.lambdas.clone())
            .expect("validated in resolve")
    }

    pub fn inputs(&self) -> DenseMatrix {
        rows_to_matrix("x", &self.x).expect("validated in resolve")
    }

    pub fn lambda_star(&self) -> f64 {
        self.lambdas.iter().product()
    }

    /// Training data with `λ*` folded into the inputs.
    pub fn dataset(&self) -> Result<Dataset, ConfigError> {
        let (y, x0) = match (&self.y, &self.x0) {
            (Some(y), Some(x0)) => (y, x0),
            _ => return Err(err("posterior-predict needs `x`, `y` and `x0`")),
        };
        let y = rows_to_matrix("y", y)?;
        Dataset::new(
            self.inputs(),
            y,
            DenseVector::from_column_slice(x0),
            self.beta,
        )
        .and_then(|d| d.with_lambda_star(self.lambda_star()))
        .map_err(|e| err(e.to_string()))
    }

    pub fn mixing_source(&self) -> MixingSource {
        match self.mixing {
            MixingKind::Finite => MixingSource::Finite {
                l: self.l,
                n: self.n,
            },
            MixingKind::Limit => MixingSource::Limit {
                a: self.a,
                steps: self.m,
            },
            MixingKind::Nngp => MixingSource::Nngp,
        }
    }

    pub fn suite(&self) -> SuiteConfig {
        SuiteConfig {
            seed: self.seed,
            scale: self.scale,
            alpha: self.alpha,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn missing_seed_is_rejected() {
        let raw = ExperimentConfig::from_toml("a = 0.5").unwrap();
        let e = ResolvedConfig::resolve(raw, false).unwrap_err();
        assert!(e.0.contains("seed"));
    }

    #[test]
    fn unknown_fields_are_rejected() {
        assert!(ExperimentConfig::from_toml("seed = 1\nwidth = 3").is_err());
    }

    #[test]
    fn flags_override_file_values() {
        let file = ExperimentConfig::from_toml("seed = 1\na = 0.5\nn = 10").unwrap();
        let flags = ExperimentConfig {
            a: Some(1.0),
            ..Default::default()
        };
        let merged = file.merge(flags);
        assert_eq!(
            (merged.seed, merged.a, merged.n),
            (Some(1), Some(1.0), Some(10))
        );
    }

    #[test]
    fn default_inputs_depend_only_on_seed() {
        let raw = ExperimentConfig {
            seed: Some(5),
            ..Default::default()
        };
        let a = ResolvedConfig::resolve(raw.clone(), false).unwrap();
        let b = ResolvedConfig::resolve(raw, false).unwrap();
        assert_eq!(a.x, b.x);
        assert_eq!((a.n0, a.p), (3, 4));
    }

    #[test]
    fn invalid_parameters_are_rejected() {
        let base = ExperimentConfig {
            seed: Some(1),
            ..Default::default()
        };
        for bad in [
            ExperimentConfig {
                n: Some(2),
                ..base.clone()
            },
            ExperimentConfig {
                a: Some(-1.0),
                ..base.clone()
            },
            ExperimentConfig {
                lambdas: Some(vec![1.0]),
                ..base.clone()
            },
            ExperimentConfig {
                checks: Some(vec!["nope".into()]),
                ..base.clone()
            },
            ExperimentConfig {
                x: Some(vec![vec![1.0, 2.0], vec![3.0]]),
                ..base.clone()
            },
        ] {
            assert!(ResolvedConfig::resolve(bad, false).is_err());
        }
        assert!(ResolvedConfig::resolve(base, true).is_err());
    }

    #[test]
    fn posterior_data_shapes() {
        let raw =
            ExperimentConfig::from_toml("seed = 3\nx = [[1.0, 0.5]]\ny = [[2.0, 1.0]]\nx0 = [1.0]")
                .unwrap();
        let cfg = ResolvedConfig::resolve(raw, true).unwrap();
        assert_eq!((cfg.d, cfg.n0, cfg.p), (1, 1, 2));
        assert_eq!(cfg.dataset().unwrap().p(), 2);
    }
}
