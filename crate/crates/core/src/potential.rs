//! Homogeneous free energy density and its convex/concave split
//! `Ψ(r) = Ψ₀(r) − (θ₀/2) r²`.

use crate::error::{ChnsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PotentialKind {
    /// Flory–Huggins: `(θ/2)[(1−r)ln(1−r) + (1+r)ln(1+r)] + (θ₀/2)(1−r²)`.
    Logarithmic,
    /// Double well `(1−r²)²/4`.
    Quartic,
}

impl PotentialKind {
    pub fn name(self) -> &'static str {
        match self {
            PotentialKind::Logarithmic => "logarithmic",
            PotentialKind::Quartic => "quartic",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "logarithmic" | "log" => Some(PotentialKind::Logarithmic),
            "quartic" => Some(PotentialKind::Quartic),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PotentialParams {
    pub kind: PotentialKind,
    pub theta: f64,
    pub theta0: f64,
}

impl Default for PotentialParams {
    fn default() -> Self {
        Self::logarithmic(1.0, 2.0)
    }
}

impl PotentialParams {
    pub fn logarithmic(theta: f64, theta0: f64) -> Self {
        Self {
            kind: PotentialKind::Logarithmic,
            theta,
            theta0,
        }
    }

    /// Quartic well with the split constant `θ₀ = 2`; `θ = θ₀ − 1` is the
    /// convexity bound of `Ψ₀`.
    pub fn quartic() -> Self {
        Self {
            kind: PotentialKind::Quartic,
            theta: 1.0,
            theta0: 2.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            PotentialKind::Logarithmic => {
                if !(self.theta > 0.0 && self.theta0 > self.theta && self.theta0.is_finite()) {
                    return Err(ChnsError::InvalidParams(format!(
                        "violates (H2): logarithmic potential needs 0 < theta < theta0, got theta={}, theta0={}",
                        self.theta, self.theta0
                    )));
                }
            }
            PotentialKind::Quartic => {
                if !(self.theta0 >= 1.0 && self.theta0.is_finite()) {
                    return Err(ChnsError::InvalidParams(format!(
                        "violates (H2): quartic split needs theta0 >= 1, got {}",
                        self.theta0
                    )));
                }
            }
        }
        Ok(())
    }

    /// Whether the convex part is singular at `±1`.
    pub fn is_singular(&self) -> bool {
        self.kind == PotentialKind::Logarithmic
    }

    pub fn psi(&self, r: f64) -> Result<f64> {
        Ok(self.psi0(r)? - 0.5 * self.theta0 * r * r)
    }

    /// Convex part `Ψ₀`.
    pub fn psi0(&self, r: f64) -> Result<f64> {
        match self.kind {
            PotentialKind::Logarithmic => {
                if !(-1.0..=1.0).contains(&r) {
                    return Err(ChnsError::Domain(r));
                }
                Ok(0.5 * self.theta * (xlnx(1.0 - r) + xlnx(1.0 + r)) + 0.5 * self.theta0)
            }
            PotentialKind::Quartic => {
                let r2 = r * r;
                Ok(0.25 * r2 * r2 + 0.5 * (self.theta0 - 1.0) * r2 + 0.25)
            }
        }
    }

    pub fn psi_prime(&self, r: f64) -> Result<f64> {
        Ok(self.psi0_prime(r)? - self.theta0 * r)
    }

    pub fn psi0_prime(&self, r: f64) -> Result<f64> {
        match self.kind {
            PotentialKind::Logarithmic => {
                self.open_interval(r)?;
                // (θ/2) ln((1+r)/(1−r))
                Ok(self.theta * r.atanh())
            }
            PotentialKind::Quartic => Ok(r * r * r + (self.theta0 - 1.0) * r),
        }
    }

    pub fn psi0_second(&self, r: f64) -> Result<f64> {
        match self.kind {
            PotentialKind::Logarithmic => {
                self.open_interval(r)?;
                Ok(self.theta / ((1.0 - r) * (1.0 + r)))
            }
            PotentialKind::Quartic => Ok(3.0 * r * r + self.theta0 - 1.0),
        }
    }

    pub fn psi_second(&self, r: f64) -> Result<f64> {
        Ok(self.psi0_second(r)? - self.theta0)
    }

    fn open_interval(&self, r: f64) -> Result<()> {
        if r.abs() < 1.0 {
            Ok(())
        } else {
            Err(ChnsError::Domain(r))
        }
    }
}

/// `x ln x` continued by 0 at `x = 0`.
fn xlnx(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn log12() -> PotentialParams {
        PotentialParams::logarithmic(1.0, 2.0)
    }

    #[test]
    fn logarithmic_at_zero_is_half_theta0() {
        assert_eq!(log12().psi(0.0).unwrap(), 1.0);
    }

    #[test]
    fn quartic_minima_vanish() {
        let q = PotentialParams::quartic();
        assert_eq!(q.psi(1.0).unwrap(), 0.0);
        assert_eq!(q.psi(-1.0).unwrap(), 0.0);
        assert!((q.psi(0.3).unwrap() - (1.0 - 0.09_f64).powi(2) / 4.0).abs() < 1e-15);
    }

    #[test]
    fn logarithmic_half_matches_high_precision_value() {
        // 0.5*[0.5 ln 0.5 + 1.5 ln 1.5] + 0.75, evaluated with mpmath at 50 digits
        let reference = 0.880_812_035_941_137_f64;
        let v = log12().psi(0.5).unwrap();
        assert!((v - reference).abs() < 1e-15, "{v}");
    }

    #[test]
    fn endpoints_use_continuous_extension() {
        let p = log12();
        assert!((p.psi(1.0).unwrap() - (2.0_f64.ln() + 1.0 - 1.0)).abs() < 1e-15);
        assert!(matches!(p.psi(1.0 + 1e-12), Err(ChnsError::Domain(_))));
        assert!(p.psi_prime(1.0).is_err());
        assert!(p.psi0_second(-1.0).is_err());
    }

    #[test]
    fn derivatives_are_odd_and_convexity_bound_holds() {
        for p in [log12(), PotentialParams::quartic()] {
            assert_eq!(p.psi_prime(0.0).unwrap(), 0.0);
            assert!((p.psi0_second(0.0).unwrap() - p.theta).abs() < 1e-15);
        }
        let p = log12();
        let mut r = -1.0 + 1e-6;
        while r < 1.0 - 1e-6 {
            assert!(p.psi0_second(r).unwrap() >= p.theta);
            r += 1e-3;
        }
    }

    #[test]
    fn derivative_blows_up_at_barrier() {
        let p = log12();
        // θ·atanh(r) − θ₀r only passes 10θ once 1 − r is below ~1e-10
        assert!(p.psi_prime(1.0 - 1e-12).unwrap() > 10.0 * p.theta);
        assert!(p.psi_prime(-1.0 + 1e-12).unwrap() < -10.0 * p.theta);
        let mut prev = p.psi_prime(0.9).unwrap();
        for k in 2..14 {
            let cur = p.psi_prime(1.0 - 10f64.powi(-k)).unwrap();
            assert!(cur > prev);
            prev = cur;
        }
    }

    #[test]
    fn split_reconstructs_potential() {
        for p in [log12(), PotentialParams::logarithmic(0.7, 1.3), PotentialParams::quartic()] {
            for k in 0..=200 {
                let r = -0.995 + 1.99 * k as f64 / 200.0;
                // closed forms written out independently of the split
                let lhs = match p.kind {
                    PotentialKind::Logarithmic => {
                        0.5 * p.theta * ((1.0 - r) * (1.0 - r).ln() + (1.0 + r) * (1.0 + r).ln())
                            + 0.5 * p.theta0 * (1.0 - r * r)
                    }
                    PotentialKind::Quartic => 0.25 * (1.0 - r * r).powi(2),
                };
                let rhs = p.psi0(r).unwrap() - 0.5 * p.theta0 * r * r;
                assert!((lhs - rhs).abs() <= 1e-13 * lhs.abs().max(1.0));
            }
        }
    }

    #[test]
    fn finite_differences_match_derivatives() {
        let h = 1e-6;
        for p in [log12(), PotentialParams::quartic()] {
            for k in 1..40 {
                let r = -0.95 + 1.9 * k as f64 / 40.0;
                let fd = (p.psi(r + h).unwrap() - p.psi(r - h).unwrap()) / (2.0 * h);
                let d = p.psi_prime(r).unwrap();
                assert!((fd - d).abs() <= 1e-7 * d.abs().max(1.0), "{r}: {fd} vs {d}");
                let fd2 = (p.psi0_prime(r + h).unwrap() - p.psi0_prime(r - h).unwrap()) / (2.0 * h);
                let d2 = p.psi0_second(r).unwrap();
                assert!((fd2 - d2).abs() <= 1e-6 * d2.abs().max(1.0));
            }
        }
    }

    #[test]
    fn second_derivative_monotone_near_endpoints() {
        let p = log12();
        let eps0 = 0.1;
        let n = 1000;
        let mut prev = p.psi0_second(1.0 - eps0).unwrap();
        for k in 1..n {
            let r = 1.0 - eps0 + eps0 * k as f64 / n as f64;
            let cur = p.psi0_second(r).unwrap();
            assert!(cur >= prev);
            prev = cur;
        }
        let mut prev = p.psi0_second(-1.0 + 1e-9).unwrap();
        for k in 1..n {
            let r = -1.0 + 1e-9 + (eps0 - 1e-9) * k as f64 / n as f64;
            let cur = p.psi0_second(r).unwrap();
            assert!(cur <= prev);
            prev = cur;
        }
    }

    #[test]
    fn validation_enforces_split_hypothesis() {
        assert!(log12().validate().is_ok());
        assert!(PotentialParams::logarithmic(2.0, 2.0).validate().is_err());
        assert!(PotentialParams::logarithmic(-1.0, 2.0).validate().is_err());
        assert!(PotentialParams::quartic().validate().is_ok());
    }
}
