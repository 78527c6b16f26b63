//! Model parameters for the stochastic-volatility jump-diffusion family.
//!
//! Black–Scholes and Merton use a constant volatility; Heston, Bates and the
//! fractional SVJD model share the fractional parameter set, with `H = 1/2`
//! giving the classical square-root variance dynamics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Floor applied to `v` wherever `1/sqrt(v)` appears.
pub const V_FLOOR: f64 = 1e-10;

/// Log-normal jumps `ln(1 + Y) ~ N(mu_j, sigma_j^2)` arriving at rate `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpSpec {
    pub lambda: f64,
    pub mu_j: f64,
    pub sigma_j: f64,
}

impl JumpSpec {
    pub fn new(lambda: f64, mu_j: f64, sigma_j: f64) -> Result<Self> {
        if !(lambda >= 0.0) || !lambda.is_finite() {
            return Err(Error::InvalidModel(format!(
                "jump intensity {lambda} must be >= 0"
            )));
        }
        if !(sigma_j >= 0.0) || !sigma_j.is_finite() || !mu_j.is_finite() {
            return Err(Error::InvalidModel(format!(
                "invalid jump size law N({mu_j}, {sigma_j}^2)"
            )));
        }
        Ok(Self {
            lambda,
            mu_j,
            sigma_j,
        })
    }

    pub fn none() -> Self {
        Self {
            lambda: 0.0,
            mu_j: 0.0,
            sigma_j: 0.0,
        }
    }

    pub fn is_active(&self) -> bool {
        self.lambda > 0.0
    }

    /// Mean relative jump `E[Y] = exp(mu_j + sigma_j^2 / 2) - 1`.
    pub fn beta(&self) -> f64 {
        (self.mu_j + 0.5 * self.sigma_j * self.sigma_j).exp_m1()
    }

    /// Log-normal density of the jump multiplier `1 + Y` at `y > 0`.
    pub fn density(&self, y: f64) -> Result<f64> {
        if !(y > 0.0) {
            return Err(Error::Domain {
                value: y,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        let z = (y.ln() - self.mu_j) / self.sigma_j;
        Ok((-0.5 * z * z).exp() / (y * self.sigma_j * (2.0 * std::f64::consts::PI).sqrt()))
    }
}

/// Parameters of the fractional variance process
/// `dv = p(v) dt + q(v) dW`, `p = (H - 1/2) psi sigma sqrt(v) + kappa (theta - v)`,
/// `q = eps^(H - 1/2) sigma sqrt(v)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FractionalParams {
    pub kappa: f64,
    pub theta: f64,
    pub sigma: f64,
    pub rho: f64,
    pub eps: f64,
    pub hurst: f64,
}

impl FractionalParams {
    pub fn validate(&self) -> Result<()> {
        let ok = self.kappa.is_finite()
            && self.theta.is_finite()
            && self.sigma > 0.0
            && self.sigma.is_finite()
            && (-1.0..=1.0).contains(&self.rho)
            && self.eps > 0.0
            && self.eps.is_finite()
            && (0.5..1.0).contains(&self.hurst);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidModel(format!(
                "invalid variance parameters {self:?}"
            )))
        }
    }

    /// `eps^(H - 1/2) * sigma`, the effective vol-of-vol.
    pub fn q_scale(&self) -> f64 {
        self.eps.powf(self.hurst - 0.5) * self.sigma
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum VolSpec {
    Constant { sigma: f64 },
    Fractional(FractionalParams),
}

/// Deterministic stand-in for the path functional `psi_t` entering `p(v)`.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum PsiProfile {
    #[default]
    Zero,
    Constant {
        value: f64,
    },
    /// Piecewise linear in `tau`, held constant outside the nodes.
    Table {
        tau: Vec<f64>,
        psi: Vec<f64>,
    },
}

impl PsiProfile {
    pub fn validate(&self) -> Result<()> {
        match self {
            PsiProfile::Table { tau, psi } => {
                if tau.is_empty()
                    || tau.len() != psi.len()
                    || tau.windows(2).any(|w| !(w[1] > w[0]))
                {
                    return Err(Error::InvalidModel(
                        "psi table needs increasing tau of matching length".into(),
                    ));
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            PsiProfile::Zero => true,
            PsiProfile::Constant { value } => *value == 0.0,
            PsiProfile::Table { psi, .. } => psi.iter().all(|&p| p == 0.0),
        }
    }

    pub fn eval(&self, tau: f64) -> f64 {
        match self {
            PsiProfile::Zero => 0.0,
            PsiProfile::Constant { value } => *value,
            PsiProfile::Table { tau: ts, psi } => {
                if tau <= ts[0] {
                    return psi[0];
                }
                if tau >= ts[ts.len() - 1] {
                    return psi[psi.len() - 1];
                }
                let k = ts.partition_point(|&t| t <= tau) - 1;
                let w = (tau - ts[k]) / (ts[k + 1] - ts[k]);
                (1.0 - w) * psi[k] + w * psi[k + 1]
            }
        }
    }
}

/// `(p(v), q(v), q'(v))` at one variance level.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PqCoefficients {
    pub p: f64,
    pub q: f64,
    pub dq: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    pub r: f64,
    pub strike: f64,
    pub maturity: f64,
    pub vol: VolSpec,
    pub jumps: JumpSpec,
    pub psi_profile: PsiProfile,
}

impl ModelSpec {
    pub fn new(r: f64, strike: f64, maturity: f64, vol: VolSpec, jumps: JumpSpec) -> Result<Self> {
        let m = Self {
            r,
            strike,
            maturity,
            vol,
            jumps,
            psi_profile: PsiProfile::Zero,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn black_scholes(r: f64, sigma: f64, strike: f64, maturity: f64) -> Result<Self> {
        Self::new(
            r,
            strike,
            maturity,
            VolSpec::Constant { sigma },
            JumpSpec::none(),
        )
    }

    pub fn merton(r: f64, sigma: f64, strike: f64, maturity: f64, jumps: JumpSpec) -> Result<Self> {
        Self::new(r, strike, maturity, VolSpec::Constant { sigma }, jumps)
    }

    pub fn svjd(
        r: f64,
        strike: f64,
        maturity: f64,
        params: FractionalParams,
        jumps: JumpSpec,
    ) -> Result<Self> {
        Self::new(r, strike, maturity, VolSpec::Fractional(params), jumps)
    }

    pub fn with_psi(mut self, psi: PsiProfile) -> Result<Self> {
        psi.validate()?;
        self.psi_profile = psi;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.strike > 0.0) || !(self.maturity > 0.0) || !self.r.is_finite() {
            return Err(Error::InvalidModel(format!(
                "need K > 0, T > 0 and finite r (K={}, T={}, r={})",
                self.strike, self.maturity, self.r
            )));
        }
        match &self.vol {
            VolSpec::Constant { sigma } if !(*sigma >= 0.0) || !sigma.is_finite() => {
                return Err(Error::InvalidModel(format!(
                    "volatility {sigma} must be >= 0"
                )));
            }
            VolSpec::Fractional(f) => f.validate()?,
            _ => {}
        }
        JumpSpec::new(self.jumps.lambda, self.jumps.mu_j, self.jumps.sigma_j)?;
        if self.jumps.is_active() && !(self.jumps.sigma_j > 0.0) {
            return Err(Error::InvalidModel("active jumps need sigma_J > 0".into()));
        }
        self.psi_profile.validate()
    }

    pub fn fractional(&self) -> Option<&FractionalParams> {
        match &self.vol {
            VolSpec::Fractional(f) => Some(f),
            VolSpec::Constant { .. } => None,
        }
    }

    pub fn constant_sigma(&self) -> Option<f64> {
        match self.vol {
            VolSpec::Constant { sigma } => Some(sigma),
            VolSpec::Fractional(_) => None,
        }
    }

    /// Variance-process coefficients at `(v, tau)`. The `1/sqrt(v)` in `q'`
    /// is evaluated at `max(v, V_FLOOR)`.
    pub fn pq_coefficients(&self, v: f64, tau: f64) -> Result<PqCoefficients> {
        if !(v >= 0.0) {
            return Err(Error::Domain {
                value: v,
                lo: 0.0,
                hi: f64::INFINITY,
            });
        }
        Ok(match &self.vol {
            VolSpec::Constant { .. } => PqCoefficients {
                p: 0.0,
                q: 0.0,
                dq: 0.0,
            },
            VolSpec::Fractional(f) => {
                let sv = v.sqrt();
                let c = f.q_scale();
                PqCoefficients {
                    p: (f.hurst - 0.5) * self.psi_profile.eval(tau) * f.sigma * sv
                        + f.kappa * (f.theta - v),
                    q: c * sv,
                    dq: c / (2.0 * v.max(V_FLOOR).sqrt()),
                }
            }
        })
    }
}

/// Flat config form of a model:
/// `{r, K, T, model, sigma | (kappa, theta, sigma, rho, eps, H), lambda, mu_J, sigma_J}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub model: ModelKind,
    pub r: f64,
    #[serde(rename = "K")]
    pub strike: f64,
    #[serde(rename = "T")]
    pub maturity: f64,
    pub sigma: f64,
    #[serde(default)]
    pub kappa: Option<f64>,
    #[serde(default)]
    pub theta: Option<f64>,
    #[serde(default)]
    pub rho: Option<f64>,
    #[serde(default)]
    pub eps: Option<f64>,
    #[serde(default, rename = "H")]
    pub hurst: Option<f64>,
    #[serde(default)]
    pub lambda: f64,
    #[serde(default, rename = "mu_J")]
    pub mu_j: f64,
    #[serde(default, rename = "sigma_J")]
    pub sigma_j: f64,
    /// Initial variance, used by reference pricers and error slices.
    #[serde(default)]
    pub v0: Option<f64>,
    #[serde(default)]
    pub psi: PsiProfile,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Bs,
    Merton,
    Heston,
    Bates,
    Fsvjd,
}

impl ModelConfig {
    pub fn to_spec(&self) -> Result<ModelSpec> {
        let need = |o: Option<f64>, name: &str| {
            o.ok_or_else(|| Error::Config(format!("model '{:?}' requires '{name}'", self.model)))
        };
        let jumps = JumpSpec::new(self.lambda, self.mu_j, self.sigma_j)?;
        let fractional = |eps: f64, hurst: f64| -> Result<FractionalParams> {
            Ok(FractionalParams {
                kappa: need(self.kappa, "kappa")?,
                theta: need(self.theta, "theta")?,
                sigma: self.sigma,
                rho: need(self.rho, "rho")?,
                eps,
                hurst,
            })
        };
        let spec = match self.model {
            ModelKind::Bs => {
                ModelSpec::black_scholes(self.r, self.sigma, self.strike, self.maturity)?
            }
            ModelKind::Merton => {
                ModelSpec::merton(self.r, self.sigma, self.strike, self.maturity, jumps)?
            }
            ModelKind::Heston => ModelSpec::svjd(
                self.r,
                self.strike,
                self.maturity,
                fractional(1.0, 0.5)?,
                JumpSpec::none(),
            )?,
            ModelKind::Bates => ModelSpec::svjd(
                self.r,
                self.strike,
                self.maturity,
                fractional(1.0, 0.5)?,
                jumps,
            )?,
            ModelKind::Fsvjd => {
                let f = fractional(need(self.eps, "eps")?, need(self.hurst, "H")?)?;
                ModelSpec::svjd(self.r, self.strike, self.maturity, f, jumps)?
            }
        };
        spec.with_psi(self.psi.clone())
    }
}
