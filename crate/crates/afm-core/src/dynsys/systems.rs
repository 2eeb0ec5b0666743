//! Benchmark system definitions: drift functions, diffusion constants,
//! initial-condition ranges, and integration intervals.

use crate::error::CoreError;

/// One of the five benchmark systems.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SystemKind {
    Lorenz,
    FitzhughNagumo,
    LotkaVolterra,
    Brusselator,
    VanDerPol,
}

impl SystemKind {
    pub const ALL: [SystemKind; 5] = [
        SystemKind::Lorenz,
        SystemKind::FitzhughNagumo,
        SystemKind::LotkaVolterra,
        SystemKind::Brusselator,
        SystemKind::VanDerPol,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SystemKind::Lorenz => "lorenz",
            SystemKind::FitzhughNagumo => "fitzhugh_nagumo",
            SystemKind::LotkaVolterra => "lotka_volterra",
            SystemKind::Brusselator => "brusselator",
            SystemKind::VanDerPol => "van_der_pol",
        }
    }

    pub fn parse(s: &str) -> Result<Self, CoreError> {
        match s.trim().to_ascii_lowercase().as_str() {
            "lorenz" => Ok(SystemKind::Lorenz),
            "fitzhugh_nagumo" | "fitzhugh-nagumo" | "fhn" => Ok(SystemKind::FitzhughNagumo),
            "lotka_volterra" | "lotka-volterra" | "lv" => Ok(SystemKind::LotkaVolterra),
            "brusselator" => Ok(SystemKind::Brusselator),
            "van_der_pol" | "van-der-pol" | "vdp" => Ok(SystemKind::VanDerPol),
            other => Err(CoreError::UnknownSystem(other.to_string())),
        }
    }

    pub fn spec(self) -> SystemSpec {
        match self {
            SystemKind::Lorenz => SystemSpec {
                kind: self,
                dim: 3,
                params: vec![("sigma", 10.0), ("rho", 28.0), ("beta", 8.0 / 3.0)],
                sigma_diff: vec![1.5; 3],
                init_lo: 0.0,
                init_hi: 10.0,
                t0: 0.0,
                t1: 2.0,
                clamp_floor: None,
            },
            SystemKind::FitzhughNagumo => SystemSpec {
                kind: self,
                dim: 2,
                params: vec![("a", 0.7), ("b", 0.8), ("tau", 12.5), ("i_ext", 0.5)],
                sigma_diff: vec![1.5; 2],
                init_lo: -2.0,
                init_hi: 2.0,
                t0: 0.0,
                t1: 10.0,
                clamp_floor: None,
            },
            SystemKind::LotkaVolterra => SystemSpec {
                kind: self,
                dim: 2,
                params: vec![("alpha", 1.3), ("beta", 0.9), ("gamma", 0.8), ("delta", 1.8)],
                sigma_diff: vec![1.5; 2],
                init_lo: 0.0,
                init_hi: 5.0,
                t0: 0.0,
                t1: 20.0,
                clamp_floor: Some(1e-9),
            },
            SystemKind::Brusselator => SystemSpec {
                kind: self,
                dim: 2,
                params: vec![("a", 1.0), ("b", 3.0)],
                sigma_diff: vec![1.5; 2],
                init_lo: 0.0,
                init_hi: 2.0,
                t0: 0.0,
                t1: 20.0,
                clamp_floor: None,
            },
            SystemKind::VanDerPol => SystemSpec {
                kind: self,
                dim: 2,
                params: vec![("mu", 0.1)],
                sigma_diff: vec![1.5; 2],
                init_lo: -2.0,
                init_hi: 2.0,
                t0: 0.0,
                t1: 20.0,
                clamp_floor: None,
            },
        }
    }
}

/// Full specification of one benchmark system.
#[derive(Debug, Clone)]
pub struct SystemSpec {
    pub kind: SystemKind,
    pub dim: usize,
    /// Named drift parameters (documentation and meta.json provenance; the
    /// drift function hard-codes the same values).
    pub params: Vec<(&'static str, f64)>,
    /// Per-dimension diffusion constants.
    pub sigma_diff: Vec<f64>,
    /// Uniform initial-condition bounds, identical for every dimension.
    pub init_lo: f64,
    pub init_hi: f64,
    pub t0: f64,
    pub t1: f64,
    /// Lower clamp applied during integration (population positivity).
    pub clamp_floor: Option<f64>,
}

/// Evaluate the drift f(x) for `kind` into `out`.
pub fn drift(kind: SystemKind, x: &[f64], out: &mut [f64]) {
    match kind {
        SystemKind::Lorenz => {
            let (sigma, rho, beta) = (10.0, 28.0, 8.0 / 3.0);
            out[0] = sigma * (x[1] - x[0]);
            out[1] = x[0] * (rho - x[2]) - x[1];
            out[2] = x[0] * x[1] - beta * x[2];
        }
        SystemKind::FitzhughNagumo => {
            let (a, b, tau, i_ext) = (0.7, 0.8, 12.5, 0.5);
            out[0] = x[0] - x[0] * x[0] * x[0] / 3.0 - x[1] + i_ext;
            out[1] = (x[0] + a - b * x[1]) / tau;
        }
        SystemKind::LotkaVolterra => {
            let (alpha, beta, gamma, delta) = (1.3, 0.9, 0.8, 1.8);
            out[0] = alpha * x[0] - beta * x[0] * x[1];
            out[1] = -delta * x[1] + gamma * x[0] * x[1];
        }
        SystemKind::Brusselator => {
            let (a, b) = (1.0, 3.0);
            out[0] = a + x[0] * x[0] * x[1] - (b + 1.0) * x[0];
            out[1] = b * x[0] - x[0] * x[0] * x[1];
        }
        SystemKind::VanDerPol => {
            let mu = 0.1;
            out[0] = x[1];
            out[1] = mu * (1.0 - x[0] * x[0]) * x[1] - x[0];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn lorenz_drift_at_ones() {
        let mut out = [0.0; 3];
        drift(SystemKind::Lorenz, &[1.0, 1.0, 1.0], &mut out);
        assert_abs_diff_eq!(out[0], 0.0);
        assert_abs_diff_eq!(out[1], 26.0);
        assert_abs_diff_eq!(out[2], -5.0 / 3.0, epsilon = 1e-15);
    }

    #[test]
    fn van_der_pol_origin_is_fixed_point() {
        let mut out = [0.0; 2];
        drift(SystemKind::VanDerPol, &[0.0, 0.0], &mut out);
        assert_eq!(out, [0.0, 0.0]);
    }

    #[test]
    fn lotka_volterra_drift_at_ones() {
        let mut out = [0.0; 2];
        drift(SystemKind::LotkaVolterra, &[1.0, 1.0], &mut out);
        assert_abs_diff_eq!(out[0], 0.4, epsilon = 1e-15);
        assert_abs_diff_eq!(out[1], -1.0, epsilon = 1e-15);
    }

    #[test]
    fn all_specs_have_consistent_dimensions() {
        for kind in SystemKind::ALL {
            let spec = kind.spec();
            assert_eq!(spec.sigma_diff.len(), spec.dim);
            assert!(spec.t1 > spec.t0);
            assert!(spec.init_hi > spec.init_lo);
            assert!(spec.sigma_diff.iter().all(|&s| s >= 0.0));
            assert_eq!(SystemKind::parse(kind.name()).unwrap(), kind);
        }
    }

    #[test]
    fn unknown_system_is_rejected() {
        assert!(matches!(
            SystemKind::parse("rossler"),
            Err(CoreError::UnknownSystem(_))
        ));
    }
}
