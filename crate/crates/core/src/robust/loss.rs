use serde::{Deserialize, Serialize};

/// Standardized residuals below this magnitude use the analytic weight limit.
const WEIGHT_LIMIT_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LossFamily {
    Square,
    Huber,
    Bisquare,
}

impl LossFamily {
    pub fn default_tuning(self) -> f64 {
        match self {
            LossFamily::Square => 1.0,
            LossFamily::Huber => 1.345,
            LossFamily::Bisquare => 4.685,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            LossFamily::Square => "square",
            LossFamily::Huber => "huber",
            LossFamily::Bisquare => "bisquare",
        }
    }
}

impl std::str::FromStr for LossFamily {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "square" => Ok(LossFamily::Square),
            "huber" => Ok(LossFamily::Huber),
            "bisquare" => Ok(LossFamily::Bisquare),
            other => Err(format!("unknown loss '{other}' (expected square, huber or bisquare)")),
        }
    }
}

impl std::fmt::Display for LossFamily {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// `rho`, its derivative `psi` and the IRLS weight `psi(x) / x` at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValues {
    pub rho: f64,
    pub psi: f64,
    pub weight: f64,
}

/// A symmetric loss with tuning constant `c`.
///
/// The square loss is `x² / 2`, so its weight is identically 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RobustLoss {
    pub family: LossFamily,
    pub tuning: f64,
}

impl RobustLoss {
    pub fn new(family: LossFamily, tuning: f64) -> Self {
        assert!(tuning > 0.0 && tuning.is_finite(), "tuning constant must be positive");
        Self { family, tuning }
    }

    pub fn square() -> Self {
        Self::new(LossFamily::Square, 1.0)
    }

    pub fn huber(c: f64) -> Self {
        Self::new(LossFamily::Huber, c)
    }

    pub fn bisquare(c: f64) -> Self {
        Self::new(LossFamily::Bisquare, c)
    }

    pub fn with_default_tuning(family: LossFamily) -> Self {
        Self::new(family, family.default_tuning())
    }

    pub fn is_convex(&self) -> bool {
        !matches!(self.family, LossFamily::Bisquare)
    }

    pub fn rho(&self, x: f64) -> f64 {
        let c = self.tuning;
        match self.family {
            LossFamily::Square => 0.5 * x * x,
            LossFamily::Huber => {
                let a = x.abs();
                if a <= c {
                    0.5 * x * x
                } else {
                    c * a - 0.5 * c * c
                }
            }
            LossFamily::Bisquare => {
                let u = x / c;
                if u.abs() >= 1.0 {
                    c * c / 6.0
                } else {
                    let v = 1.0 - u * u;
                    c * c / 6.0 * (1.0 - v * v * v)
                }
            }
        }
    }

    /// `ρ(x + d) − ρ(x)` without the cancellation of subtracting two
    /// evaluated losses when `d` is small.
    pub fn rho_difference(&self, x: f64, d: f64) -> f64 {
        let c = self.tuning;
        let quadratic = 0.5 * d * (2.0 * x + d);
        match self.family {
            LossFamily::Square => quadratic,
            LossFamily::Huber => {
                let y = x + d;
                if x.abs() <= c && y.abs() <= c {
                    quadratic
                } else if x > c && y > c {
                    c * d
                } else if x < -c && y < -c {
                    -c * d
                } else {
                    self.rho(y) - self.rho(x)
                }
            }
            LossFamily::Bisquare => self.rho(x + d) - self.rho(x),
        }
    }

    pub fn psi(&self, x: f64) -> f64 {
        let c = self.tuning;
        match self.family {
            LossFamily::Square => x,
            LossFamily::Huber => x.clamp(-c, c),
            LossFamily::Bisquare => {
                let u = x / c;
                if u.abs() >= 1.0 {
                    0.0
                } else {
                    let v = 1.0 - u * u;
                    x * v * v
                }
            }
        }
    }

    pub fn weight(&self, x: f64) -> f64 {
        if x.abs() < WEIGHT_LIMIT_EPS {
            return 1.0;
        }
        let c = self.tuning;
        match self.family {
            LossFamily::Square => 1.0,
            LossFamily::Huber => {
                let a = x.abs();
                if a <= c {
                    1.0
                } else {
                    c / a
                }
            }
            LossFamily::Bisquare => {
                let u = x / c;
                if u.abs() >= 1.0 {
                    0.0
                } else {
                    let v = 1.0 - u * u;
                    v * v
                }
            }
        }
    }

    pub fn eval(&self, x: f64) -> LossValues {
        LossValues {
            rho: self.rho(x),
            psi: self.psi(x),
            weight: self.weight(x),
        }
    }
}
