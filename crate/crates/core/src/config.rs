use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// System constants shared by the analyses. `delta` is always `exp(-mu_star)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SystemConfig {
    pub delta: f64,
    pub rho: f64,
    pub alpha: f64,
    pub beta: f64,
    pub c: f64,
    pub theta: f64,
    pub eps0: f64,
    pub c0: f64,
    pub mu_star: u32,
    pub kmax: usize,
    /// Orbit horizon used by checks that need one.
    pub horizon: usize,
    /// Scale factor `K(delta)` in the C2(b) threshold `K(delta) b`.
    /// `None` means the default `10 / delta^3`.
    pub k_delta: Option<f64>,
    /// Hyperbolicity floor multiplier: growth below `kappa_factor * sqrt|b|` is rejected.
    pub kappa_factor: f64,
    /// Maximum number of components scanned per parent in the hierarchy.
    pub component_cap: usize,
}

impl Default for SystemConfig {
    fn default() -> Self {
        let mu_star = 2;
        SystemConfig {
            delta: (-(mu_star as f64)).exp(),
            rho: 0.2,
            alpha: 0.25,
            beta: 0.5,
            c: 0.8,
            theta: 0.1,
            eps0: 0.1,
            c0: 1.0,
            mu_star,
            kmax: 3,
            horizon: 50,
            k_delta: None,
            kappa_factor: 10.0,
            component_cap: 64,
        }
    }
}

impl SystemConfig {
    pub fn with_mu_star(mut self, mu_star: u32) -> Self {
        self.mu_star = mu_star;
        self.delta = (-(mu_star as f64)).exp();
        self
    }

    pub fn k_delta(&self) -> f64 {
        self.k_delta.unwrap_or(10.0 / self.delta.powi(3))
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        let finite = [
            self.delta, self.rho, self.alpha, self.beta, self.c, self.theta, self.eps0, self.c0,
            self.kappa_factor,
        ];
        if finite.iter().any(|v| !v.is_finite()) {
            return bad("all constants must be finite".into());
        }
        if !(0.0 < self.alpha && self.alpha < self.beta && self.beta < 1.0) {
            return bad(format!(
                "need 0 < alpha < beta < 1 (alpha = {}, beta = {})",
                self.alpha, self.beta
            ));
        }
        if !(0.0 < self.rho && self.rho < 1.0) {
            return bad(format!("need 0 < rho < 1 (rho = {})", self.rho));
        }
        if self.mu_star < 1 {
            return bad("mu_star must be at least 1".into());
        }
        let expected = (-(self.mu_star as f64)).exp();
        if (self.delta - expected).abs() > 1e-12 * expected {
            return bad(format!(
                "delta = {} does not equal exp(-mu_star) = {expected}",
                self.delta
            ));
        }
        if self.eps0 <= 0.0 || self.c0 <= 0.0 || self.theta <= 0.0 {
            return bad("eps0, c0 and theta must be positive".into());
        }
        if let Some(k) = self.k_delta {
            if !(k > 0.0 && k.is_finite()) {
                return bad("k_delta must be positive".into());
            }
        }
        if self.component_cap == 0 {
            return bad("component_cap must be positive".into());
        }
        Ok(())
    }

    /// Human-readable warnings when `b` is not small against the other constants.
    pub fn warnings(&self, b: f64) -> Vec<String> {
        let scale = self.alpha.min(self.delta).min(self.rho).min((-self.c).exp());
        if b.abs() > 0.01 * scale {
            vec![format!(
                "|b| = {:.3e} is not much smaller than min(alpha, delta, rho, e^-c) = {scale:.3e}",
                b.abs()
            )]
        } else {
            Vec::new()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = SystemConfig::default();
        cfg.validate().unwrap();
        assert!((cfg.delta - (-2.0f64).exp()).abs() < 1e-15);
        assert!((cfg.k_delta() - 10.0 * 6f64.exp()).abs() < 1e-9);
    }

    #[test]
    fn ordering_violations_rejected() {
        let mut cfg = SystemConfig::default();
        cfg.alpha = 0.6;
        assert!(cfg.validate().is_err());
        let mut cfg = SystemConfig::default();
        cfg.rho = 1.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SystemConfig::default();
        cfg.delta = 0.2;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn large_b_warns() {
        let cfg = SystemConfig::default();
        assert!(cfg.warnings(1e-6).is_empty());
        assert_eq!(cfg.warnings(0.3).len(), 1);
    }

    #[test]
    fn partial_json_uses_defaults() {
        let cfg: SystemConfig = serde_json::from_str(r#"{"alpha": 0.2}"#).unwrap();
        assert_eq!(cfg.alpha, 0.2);
        assert_eq!(cfg.rho, 0.2);
        cfg.validate().unwrap();
    }
}
