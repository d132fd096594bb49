//! Experiment configuration. Every constraint is checked in [`ExperimentConfig::parse`]
//! so that a run never fails on a bad parameter halfway through.

use num_bigint::BigInt;
use num_integer::Integer;
use num_traits::{One, ToPrimitive, Zero};
use serde::{Deserialize, Serialize};

use crate::design_kikuchi::{default_slack, KikuchiParams};
use crate::error::{Error, Result};
use crate::rational::{self, Q};

pub const BUDGET_ENV: &str = "LCCBOUND_BUDGET";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Budgets {
    #[serde(default = "default_budget")]
    pub max_chains: u64,
    #[serde(default = "default_budget")]
    pub max_subsets: u64,
    #[serde(default = "default_budget")]
    pub max_entries: u64,
}

fn default_budget() -> u64 {
    10_000_000
}

impl Default for Budgets {
    fn default() -> Self {
        Budgets { max_chains: default_budget(), max_subsets: default_budget(), max_entries: default_budget() }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Exact,
    Mc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// RM design parameter, `n = 4^t`.
    pub t: Option<u32>,
    pub n: Option<usize>,
    pub k: Option<usize>,
    /// Chain length; for the nonlinear pipeline derived from `eps`, `eta` when absent.
    pub r: Option<usize>,
    pub ell: usize,
    pub d: Option<usize>,
    /// Rationals as strings, e.g. `"1/3"`.
    pub delta: Option<String>,
    pub eps: Option<String>,
    pub eta: Option<String>,
    #[serde(default = "default_gamma")]
    pub gamma: u32,
    pub slack: Option<f64>,
    pub seed: u64,
    #[serde(default)]
    pub budgets: Budgets,
    #[serde(default)]
    pub mode: Mode,
    #[serde(default = "default_mc_samples")]
    pub mc_samples: usize,
    #[serde(default)]
    pub hyper_tail: bool,
    /// Enforce `ℓ ≥ 6d(r+1)/δ`.
    #[serde(default)]
    pub mimic_lemma: bool,
    pub workers: Option<usize>,
    #[serde(default = "default_trials")]
    pub trials: usize,
}

fn default_gamma() -> u32 {
    64
}

fn default_mc_samples() -> usize {
    10_000
}

fn default_trials() -> usize {
    200
}

fn cfg_err(msg: impl Into<String>) -> Error {
    Error::Config(msg.into())
}

/// `min(⌊(1−η)/(2ε)⌋, ⌊log₂ n⌋)`; `ε = 0` leaves only the log term.
pub fn r_clamp(eps: &Q, eta: &Q, n: usize) -> usize {
    let lg = if n <= 1 { 0 } else { (usize::BITS - 1 - n.leading_zeros()) as usize };
    if eps.is_zero() {
        return lg;
    }
    let x = (Q::one() - eta) / (Q::from_integer(BigInt::from(2)) * eps);
    let fl = x.numer().div_floor(x.denom());
    fl.to_usize().unwrap_or(usize::MAX).min(lg)
}

impl ExperimentConfig {
    /// TOML, or JSON when the text starts with `{`. Applies the budget
    /// override from the environment and validates.
    pub fn parse(text: &str) -> Result<ExperimentConfig> {
        let mut cfg: ExperimentConfig = if text.trim_start().starts_with('{') {
            serde_json::from_str(text).map_err(|e| cfg_err(e.to_string()))?
        } else {
            toml::from_str(text).map_err(|e| cfg_err(e.to_string()))?
        };
        if let Ok(v) = std::env::var(BUDGET_ENV) {
            let b: u64 = v.trim().parse().map_err(|_| cfg_err(format!("{BUDGET_ENV}={v:?} is not an integer")))?;
            cfg.budgets = Budgets { max_chains: b, max_subsets: b, max_entries: b };
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    fn rat(&self, name: &str, v: &Option<String>) -> Result<Option<Q>> {
        v.as_deref().map(|s| rational::parse(s).map_err(|e| cfg_err(format!("{name}: {e}")))).transpose()
    }

    pub fn delta_q(&self) -> Result<Option<Q>> {
        self.rat("delta", &self.delta)
    }

    pub fn eps_q(&self) -> Result<Q> {
        Ok(self.rat("eps", &self.eps)?.unwrap_or_else(Q::zero))
    }

    pub fn eta_q(&self) -> Result<Q> {
        Ok(self.rat("eta", &self.eta)?.unwrap_or_else(Q::zero))
    }

    pub fn gamma_q(&self) -> Q {
        Q::from_integer(BigInt::from(self.gamma))
    }

    /// `4^t` when `t` is given, else `n`.
    pub fn length(&self) -> Option<usize> {
        self.t.map(|t| 1usize << (2 * t)).or(self.n)
    }

    /// `r` as given, else the clamp at length `n`.
    pub fn effective_r(&self, n: usize) -> Result<usize> {
        match self.r {
            Some(r) => Ok(r),
            None => Ok(r_clamp(&self.eps_q()?, &self.eta_q()?, n)),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let zero = Q::zero();
        let one = Q::one();
        if let Some(t) = self.t {
            if !(1..=6).contains(&t) {
                return Err(cfg_err(format!("t = {t} outside 1..=6")));
            }
            if let Some(n) = self.n {
                if n != 1 << (2 * t) {
                    return Err(cfg_err(format!("n = {n} disagrees with 4^t = {}", 1usize << (2 * t))));
                }
            }
        }
        if let Some(d) = self.delta_q()? {
            if d <= zero || d > one {
                return Err(cfg_err(format!("δ = {} outside (0, 1]", rational::format(&d))));
            }
        }
        let eps = self.eps_q()?;
        if eps < zero || eps >= rational::q(1, 2) {
            return Err(cfg_err(format!("ε = {} outside [0, 1/2)", rational::format(&eps))));
        }
        let eta = self.eta_q()?;
        if eta < zero || eta >= one {
            return Err(cfg_err(format!("η = {} outside [0, 1)", rational::format(&eta))));
        }
        if self.gamma == 0 {
            return Err(cfg_err("Γ must be positive"));
        }
        if let Some(s) = self.slack {
            if !(s.is_finite() && s > 0.0) {
                return Err(cfg_err(format!("slack = {s} must be positive")));
            }
        }
        if self.workers == Some(0) {
            return Err(cfg_err("workers must be positive"));
        }
        if self.mode == Mode::Mc && self.mc_samples == 0 {
            return Err(cfg_err("mc mode needs mc_samples > 0"));
        }
        if self.ell == 0 {
            return Err(cfg_err("ℓ must be positive"));
        }
        if let Some(r) = self.r {
            if self.ell < r {
                return Err(cfg_err(format!("ℓ = {} < r = {r}", self.ell)));
            }
        }
        if let Some(n) = self.length() {
            self.validate_at(n)?;
        }
        Ok(())
    }

    /// `r` for the design pipeline; `t = 1` has no chains beyond one link.
    pub fn design_r(&self) -> Result<usize> {
        let r = self.r.ok_or_else(|| cfg_err("design pipeline needs r"))?;
        Ok(if self.t == Some(1) { r.min(1) } else { r })
    }

    /// Checks for [`crate::pipeline::pipeline_design`].
    pub fn validate_design(&self) -> Result<()> {
        let t = self.t.ok_or_else(|| cfg_err("design pipeline needs t"))?;
        let n = 1usize << (2 * t);
        let r = self.design_r()?;
        let slack = self.slack.unwrap_or_else(|| default_slack(n, r, self.ell));
        KikuchiParams { n, r, ell: self.ell, head: 0 }.validate(slack)
    }

    /// Constraints that need the code length; the nonlinear pipeline calls
    /// this again with the compiled length before any stage runs.
    pub fn validate_at(&self, n: usize) -> Result<()> {
        let r = self.effective_r(n)?;
        if self.ell < r {
            return Err(cfg_err(format!("ℓ = {} < r = {r}", self.ell)));
        }
        if self.hyper_tail {
            let d = self.d.ok_or_else(|| cfg_err("hyper_tail needs d"))?;
            if d == 0 || (d as f64).powi(r as i32 + 1) < n as f64 {
                return Err(cfg_err(format!("d^(r+1) = {d}^{} < n = {n}", r + 1)));
            }
            if 10 * self.ell * r > n {
                return Err(cfg_err(format!("ℓr = {} exceeds n/10 = {}", self.ell * r, n as f64 / 10.0)));
            }
            if self.mimic_lemma {
                let delta = self.delta_q()?.ok_or_else(|| cfg_err("mimic_lemma needs δ"))?;
                let need = Q::from_integer(BigInt::from(6 * d * (r + 1))) / delta;
                if Q::from_integer(BigInt::from(self.ell)) < need {
                    return Err(cfg_err(format!("ℓ = {} < 6d(r+1)/δ = {}", self.ell, rational::format(&need))));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASE: &str = "t = 2\nr = 2\nell = 3\nseed = 7\n";

    #[test]
    fn minimal_toml() {
        let c = ExperimentConfig::parse(BASE).unwrap();
        assert_eq!(c.gamma, 64);
        assert_eq!(c.length(), Some(16));
        assert_eq!(ExperimentConfig::parse(&c.to_toml()).unwrap(), c);
    }

    #[test]
    fn json_accepted() {
        let c = ExperimentConfig::parse(r#"{"t":1,"r":1,"ell":1,"seed":1}"#).unwrap();
        assert_eq!(c.length(), Some(4));
    }

    #[test]
    fn rejections() {
        let bad = [
            "t = 2\nr = 3\nell = 2\nseed = 1\n",
            "t = 2\nell = 2\n",
            "t = 2\nr = 1\nell = 2\nseed = 1\nbogus = 1\n",
            "t = 2\nr = 1\nell = 2\nseed = 1\ndelta = \"3/2\"\n",
            "t = 2\nr = 1\nell = 2\nseed = 1\neps = \"1/2\"\n",
            "t = 2\nr = 1\nell = 2\nseed = 1\nhyper_tail = true\n",
            "t = 2\nr = 1\nell = 2\nseed = 1\nhyper_tail = true\nd = 3\n",
            "n = 64\nr = 1\nell = 4\nd = 8\nseed = 1\nhyper_tail = true\nmimic_lemma = true\ndelta = \"1/3\"\n",
        ];
        for b in bad {
            assert!(matches!(ExperimentConfig::parse(b), Err(Error::Config(_))), "{b}");
        }
        assert!(ExperimentConfig::parse("n = 64\nr = 1\nell = 4\nd = 8\nseed = 1\nhyper_tail = true\n").is_ok());
    }

    #[test]
    fn design_checks() {
        let c = ExperimentConfig::parse("t = 1\nr = 2\nell = 2\nseed = 1\n").unwrap();
        assert_eq!(c.design_r().unwrap(), 1);
        c.validate_design().unwrap();
        let c = ExperimentConfig::parse("t = 2\nr = 2\nell = 9\nseed = 1\nslack = 1.0\n").unwrap();
        assert!(c.validate_design().is_err());
        let c = ExperimentConfig::parse("t = 2\nell = 4\nseed = 1\n").unwrap();
        assert!(c.validate_design().is_err());
    }

    #[test]
    fn clamp() {
        assert_eq!(r_clamp(&rational::q(1, 10), &rational::q(1, 5), 1 << 20), 4);
        assert_eq!(r_clamp(&rational::q(1, 10), &rational::q(1, 5), 8), 3);
        assert_eq!(r_clamp(&Q::zero(), &Q::zero(), 64), 6);
        assert_eq!(r_clamp(&rational::q(1, 4), &rational::q(1, 2), 64), 1);
    }
}
