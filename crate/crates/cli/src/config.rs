//! Run configuration: a TOML file with sections `bounds`, `gains`, `plant`,
//! `sim`, `output` and `analysis`, overridden key by key by command-line flags
//! of the same name (`x1_0` ↔ `--x1-0`).

use std::path::{Path, PathBuf};

use clap::Args;
use serde::Deserialize;

use pdstab_core::linalg::Matrix;
use pdstab_core::{Bounds, Gains};

/// A matrix given either as a scalar `s` (meaning `s·I`) or as nested rows.
///
/// On the command line rows are separated by `;` and entries by `,`.
#[derive(Clone, Debug, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum MatrixSpec {
    Scalar(f64),
    Rows(Vec<Vec<f64>>),
}

impl MatrixSpec {
    pub fn to_matrix(&self, n: usize) -> Result<Matrix, String> {
        match self {
            MatrixSpec::Scalar(s) => Ok(Matrix::scalar(n, *s)),
            MatrixSpec::Rows(rows) => {
                if rows.len() != n || rows.iter().any(|r| r.len() != n) {
                    return Err(format!("expected a {n}×{n} matrix"));
                }
                Matrix::from_rows(rows).map_err(|e| e.to_string())
            }
        }
    }
}

fn parse_matrix(s: &str) -> Result<MatrixSpec, String> {
    let rows: Vec<Vec<f64>> = s
        .split(';')
        .map(|row| row.split(',').map(|v| v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"))).collect())
        .collect::<Result<_, _>>()?;
    if rows.len() == 1 && rows[0].len() == 1 {
        Ok(MatrixSpec::Scalar(rows[0][0]))
    } else {
        Ok(MatrixSpec::Rows(rows))
    }
}

macro_rules! section {
    ($(#[$meta:meta])* $name:ident { $($(#[$fmeta:meta])* $field:ident : $ty:ty),* $(,)? }) => {
        $(#[$meta])*
        #[derive(Clone, Debug, Default, PartialEq, Deserialize, Args)]
        #[serde(deny_unknown_fields)]
        pub struct $name {
            $($(#[$fmeta])* pub $field: Option<$ty>,)*
        }

        impl $name {
            /// Fills every unset field of `self` from `file`.
            fn or(self, file: $name) -> $name {
                $name { $($field: self.$field.or(file.$field),)* }
            }
        }
    };
}

section!(BoundsSection {
    #[arg(long, global = true)] l1: f64,
    #[arg(long, global = true)] l2: f64,
    #[arg(long, global = true)] n1: f64,
    #[arg(long, global = true)] n2: f64,
    #[arg(long, global = true)] m: f64,
});

section!(GainsSection {
    #[arg(long, global = true)] kp: f64,
    #[arg(long, global = true)] kd: f64,
});

section!(PlantSection {
    /// linear | corner | sine | nonaffine_sine | corner_linear | offset_equilibrium
    #[arg(long, global = true)] kind: String,
    #[arg(long = "n", global = true)] n: usize,
    #[arg(long, global = true, value_parser = parse_matrix)] a: MatrixSpec,
    #[arg(long, global = true, value_parser = parse_matrix)] b: MatrixSpec,
    #[arg(long, global = true, value_parser = parse_matrix)] c: MatrixSpec,
    #[arg(long, global = true, value_parser = parse_matrix)] d: MatrixSpec,
    #[arg(long, global = true, value_parser = parse_matrix)] e: MatrixSpec,
    #[arg(long, global = true, value_delimiter = ',', num_args = 1..)] ystar: Vec<f64>,
    #[arg(long, global = true)] epsilon: f64,
    #[arg(long, global = true, value_delimiter = ',', num_args = 1..)] delta: Vec<f64>,
});

section!(SimSection {
    #[arg(long, global = true)] horizon: f64,
    #[arg(long, global = true)] dt: f64,
    #[arg(long, global = true)] trials: usize,
    #[arg(long, global = true)] seed: u64,
    #[arg(long = "x1-0", global = true, value_delimiter = ',', num_args = 1..)] x1_0: Vec<f64>,
    #[arg(long = "x2-0", global = true, value_delimiter = ',', num_args = 1..)] x2_0: Vec<f64>,
    #[arg(long, global = true)] record_stride: usize,
    /// Relative decay threshold for the verdicts.
    #[arg(long, global = true)] threshold: f64,
    /// Trailing fraction of the horizon averaged by the simulate verdict.
    #[arg(long, global = true)] tail: f64,
    /// Moment integrator: rk4 | expm
    #[arg(long, global = true)] method: String,
    /// Trailing fraction of the horizon used by the decay-rate fit.
    #[arg(long, global = true)] window: f64,
    /// Initial moment matrix; defaults to `z₀ z₀ᵀ` from `x1_0`, `x2_0`.
    #[arg(long, global = true, value_parser = parse_matrix)] p0: MatrixSpec,
});

section!(OutputSection {
    #[arg(long, global = true)] csv: PathBuf,
    #[arg(long, global = true)] json: PathBuf,
    /// Document written to stdout: csv | json
    #[arg(long, global = true)] format: String,
});

section!(AnalysisSection {
    /// omega0 | omega_prime | omega
    #[arg(long, global = true)] region: String,
    #[arg(long, global = true)] nx: usize,
    #[arg(long, global = true)] ny: usize,
    #[arg(long, global = true)] kp_min: f64,
    #[arg(long, global = true)] kp_max: f64,
    #[arg(long, global = true)] kd_min: f64,
    #[arg(long, global = true)] kd_max: f64,
    /// Bisection tolerance on M for the M₁* bracket.
    #[arg(long, global = true)] m1_tol: f64,
    /// Refinement rounds of the synthesis search.
    #[arg(long, global = true)] budget: usize,
    /// Certify the synthesized gains.
    #[arg(long, global = true, num_args = 0..=1, default_missing_value = "true")] certify: bool,
});

/// Every configurable key. Flags and file share this shape.
#[derive(Clone, Debug, Default, PartialEq, Deserialize, Args)]
#[serde(deny_unknown_fields)]
pub struct Settings {
    /// Worker threads for region sampling and Monte Carlo (never changes results).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    #[command(flatten)]
    #[serde(default)]
    pub bounds: BoundsSection,
    #[command(flatten)]
    #[serde(default)]
    pub gains: GainsSection,
    #[command(flatten)]
    #[serde(default)]
    pub plant: PlantSection,
    #[command(flatten)]
    #[serde(default)]
    pub sim: SimSection,
    #[command(flatten)]
    #[serde(default)]
    pub output: OutputSection,
    #[command(flatten)]
    #[serde(default)]
    pub analysis: AnalysisSection,
}

impl Settings {
    pub fn from_toml(text: &str) -> Result<Settings, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Settings, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))
    }

    /// `self` (flags) wins over `file` key by key.
    pub fn over(self, file: Settings) -> Settings {
        Settings {
            threads: self.threads.or(file.threads),
            bounds: self.bounds.or(file.bounds),
            gains: self.gains.or(file.gains),
            plant: self.plant.or(file.plant),
            sim: self.sim.or(file.sim),
            output: self.output.or(file.output),
            analysis: self.analysis.or(file.analysis),
        }
    }

    pub fn bounds(&self) -> Result<Bounds, String> {
        let b = &self.bounds;
        let get = |v: Option<f64>, key: &str| v.ok_or_else(|| format!("missing bounds.{key}"));
        Bounds::new(get(b.l1, "l1")?, get(b.l2, "l2")?, get(b.n1, "n1")?, get(b.n2, "n2")?, get(b.m, "m")?)
            .map_err(|e| e.to_string())
    }

    pub fn has_bounds(&self) -> bool {
        let b = &self.bounds;
        [b.l1, b.l2, b.n1, b.n2, b.m].iter().any(Option::is_some)
    }

    pub fn gains(&self) -> Result<Gains, String> {
        let kp = self.gains.kp.ok_or("missing gains.kp")?;
        let kd = self.gains.kd.ok_or("missing gains.kd")?;
        Gains::new(kp, kd).map_err(|e| e.to_string())
    }
}
