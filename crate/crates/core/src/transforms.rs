//! Per-coordinate gradient transforms.
//!
//! Each transform `s` maps one coordinate `u = E_t[i] - Phi_t[i]` of the
//! log-likelihood gradient to the coordinate actually used for the parameter
//! step. All of them are odd with `s(0) = 0`, so a coordinate with zero
//! gradient is never touched.
//!
//! | kind          | `s(u)`                      | slope at 0   |
//! |---------------|-----------------------------|--------------|
//! | `Identity`    | `u`                         | 1            |
//! | `RationalG1`  | `u / (u^2 + eps)`           | `1/eps`      |
//! | `ArctanG1`    | `atan(u / sqrt(eps))`       | `1/sqrt(eps)`|
//! | `ErfG2`       | `erf(alpha u)`              | `2 alpha / sqrt(pi)` |
//! | `GdG3`        | `gd(beta u)`                | `beta`       |
//!
//! `gd` is the Gudermannian function `2 atan(exp(x)) - pi/2`, evaluated here
//! as the equivalent `2 atan(tanh(x / 2))`, which is exactly odd in floating
//! point.

use std::f64::consts::{FRAC_2_SQRT_PI, PI};
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub const DEFAULT_TABLE_RESOLUTION: u32 = 4096;
pub const DEFAULT_TABLE_RANGE: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TransformKind {
    Identity,
    RationalG1,
    ArctanG1,
    ErfG2,
    GdG3,
}

impl TransformKind {
    pub const ALL: [TransformKind; 5] = [
        TransformKind::Identity,
        TransformKind::RationalG1,
        TransformKind::ArctanG1,
        TransformKind::ErfG2,
        TransformKind::GdG3,
    ];

    /// Short name used on the command line and in model files.
    pub fn name(self) -> &'static str {
        match self {
            TransformKind::Identity => "sgd",
            TransformKind::RationalG1 => "u1g1",
            TransformKind::ArctanG1 => "u2g1",
            TransformKind::ErfG2 => "u2g2",
            TransformKind::GdG3 => "u2g3",
        }
    }
}

impl fmt::Display for TransformKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TransformKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        TransformKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidTransform(format!("unknown update `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TableSpec {
    /// Grid points per unit of `range`; the grid spacing is `range / resolution`.
    pub resolution: u32,
    pub range: f64,
}

impl Default for TableSpec {
    fn default() -> Self {
        TableSpec {
            resolution: DEFAULT_TABLE_RESOLUTION,
            range: DEFAULT_TABLE_RANGE,
        }
    }
}

/// Which transform to use and its hyperparameter: `eps` for the G1 kinds,
/// `alpha` for erf, `beta` for gd. Ignored for the identity.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TransformSpec {
    pub kind: TransformKind,
    pub hyper: f64,
    pub table: Option<TableSpec>,
}

impl TransformSpec {
    pub fn identity() -> Self {
        TransformSpec {
            kind: TransformKind::Identity,
            hyper: 1.0,
            table: None,
        }
    }

    pub fn new(kind: TransformKind, hyper: f64) -> Self {
        TransformSpec {
            kind,
            hyper,
            table: None,
        }
    }

    pub fn with_table(mut self, table: TableSpec) -> Self {
        self.table = Some(table);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind != TransformKind::Identity && !(self.hyper.is_finite() && self.hyper > 0.0) {
            return Err(Error::InvalidTransform(format!(
                "{} needs a positive hyperparameter, got {}",
                self.kind, self.hyper
            )));
        }
        if let Some(t) = self.table {
            if t.resolution < 2 {
                return Err(Error::InvalidTransform("table resolution must be >= 2".into()));
            }
            if !(t.range.is_finite() && t.range > 0.0) {
                return Err(Error::InvalidTransform("table range must be positive".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct Table {
    step: f64,
    range: f64,
    half: i64,
    // values[j + half] = s(j * step), j = -half..=half
    values: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct Transform {
    spec: TransformSpec,
    // Precomputed for the hot path.
    inv_sqrt_eps: f64,
    table: Option<Table>,
}

impl Transform {
    pub fn new(spec: TransformSpec) -> Result<Self> {
        spec.validate()?;
        let mut transform = Transform {
            spec: TransformSpec { table: None, ..spec },
            inv_sqrt_eps: 1.0 / spec.hyper.sqrt(),
            table: None,
        };
        if let Some(t) = spec.table {
            transform = transform.build_table(t.resolution, t.range)?;
        }
        Ok(transform)
    }

    pub fn identity() -> Self {
        Transform::new(TransformSpec::identity()).expect("identity is valid")
    }

    pub fn spec(&self) -> &TransformSpec {
        &self.spec
    }

    pub fn kind(&self) -> TransformKind {
        self.spec.kind
    }

    /// Closed-form value, ignoring any table.
    #[inline]
    pub fn exact(&self, u: f64) -> f64 {
        let h = self.spec.hyper;
        match self.spec.kind {
            TransformKind::Identity => u,
            TransformKind::RationalG1 => u / (u * u + h),
            TransformKind::ArctanG1 => (u * self.inv_sqrt_eps).atan(),
            TransformKind::ErfG2 => libm::erf(h * u),
            TransformKind::GdG3 => 2.0 * (0.5 * h * u).tanh().atan(),
        }
    }

    /// Transformed value; table-backed when a table was built and `|u|` is
    /// within its range. The caller guarantees `u` is finite.
    #[inline]
    pub fn eval(&self, u: f64) -> f64 {
        match &self.table {
            Some(t) if u.abs() <= t.range => {
                // Rounding half away from zero keeps table lookups odd.
                let j = ((u / t.step).round() as i64).clamp(-t.half, t.half);
                t.values[(j + t.half) as usize]
            }
            _ => self.exact(u),
        }
    }

    pub fn apply(&self, u: f64) -> Result<f64> {
        if !u.is_finite() {
            return Err(Error::NonFinite(u));
        }
        Ok(self.eval(u))
    }

    pub fn slope_at_zero(&self) -> f64 {
        let h = self.spec.hyper;
        match self.spec.kind {
            TransformKind::Identity => 1.0,
            TransformKind::RationalG1 => 1.0 / h,
            TransformKind::ArctanG1 => self.inv_sqrt_eps,
            TransformKind::ErfG2 => FRAC_2_SQRT_PI * h,
            TransformKind::GdG3 => h,
        }
    }

    /// Supremum of `|s(u)|`, or infinity for the identity.
    pub fn bound(&self) -> f64 {
        match self.spec.kind {
            TransformKind::Identity => f64::INFINITY,
            TransformKind::RationalG1 => 0.5 * self.inv_sqrt_eps,
            TransformKind::ArctanG1 | TransformKind::GdG3 => PI / 2.0,
            TransformKind::ErfG2 => 1.0,
        }
    }

    /// Returns a copy backed by a lookup table with `2 * resolution + 1`
    /// samples on `[-range, range]` (spacing `range / resolution`). Lookups
    /// round to the nearest sample; inputs outside the range are evaluated
    /// exactly.
    pub fn build_table(&self, resolution: u32, range: f64) -> Result<Transform> {
        let table = TableSpec { resolution, range };
        TransformSpec {
            table: Some(table),
            ..self.spec
        }
        .validate()?;
        let n = resolution as usize;
        let step = range / resolution as f64;
        let values = (0..=2 * n)
            .map(|k| {
                let j = k as f64 - n as f64;
                self.exact(j * step)
            })
            .collect();
        Ok(Transform {
            spec: TransformSpec {
                table: Some(table),
                ..self.spec
            },
            inv_sqrt_eps: self.inv_sqrt_eps,
            table: Some(Table {
                step,
                range,
                half: n as i64,
                values,
            }),
        })
    }

    pub fn table_step(&self) -> Option<f64> {
        self.table.as_ref().map(|t| t.step)
    }
}
