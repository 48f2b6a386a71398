//! Congestion cost functions for links and compute nodes.
//!
//! The M/M/1 occupancy `x / (c - x)` diverges at capacity. Above the knee
//! `rho * c` it is continued by its second-order Taylor polynomial, so the cost
//! stays finite for transiently overloaded iterates while remaining convex
//! with a continuous derivative.

use std::str::FromStr;

use crate::error::{Error, Result};

pub const DEFAULT_RHO: f64 = 0.99;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CostKind {
    Mm1,
    Linear,
}

impl FromStr for CostKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mm1" => Ok(CostKind::Mm1),
            "linear" => Ok(CostKind::Linear),
            other => Err(Error::Config(format!(
                "unknown cost kind '{other}' (expected mm1 or linear)"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CostModel {
    Mm1 { capacity: f64, rho: f64 },
    Linear { slope: f64 },
}

impl CostModel {
    pub fn mm1(capacity: f64) -> Result<Self> {
        Self::mm1_with_knee(capacity, DEFAULT_RHO)
    }

    pub fn mm1_with_knee(capacity: f64, rho: f64) -> Result<Self> {
        if !(capacity.is_finite() && capacity > 0.0) {
            return Err(Error::Domain(format!(
                "M/M/1 capacity must be positive, got {capacity}"
            )));
        }
        if !(rho > 0.0 && rho < 1.0) {
            return Err(Error::Domain(format!(
                "barrier fraction must lie in (0, 1), got {rho}"
            )));
        }
        Ok(CostModel::Mm1 { capacity, rho })
    }

    pub fn linear(slope: f64) -> Result<Self> {
        if !(slope.is_finite() && slope >= 0.0) {
            return Err(Error::Domain(format!(
                "linear slope must be non-negative, got {slope}"
            )));
        }
        Ok(CostModel::Linear { slope })
    }

    /// Builds a model of the requested kind for a resource of the given
    /// capacity. Linear models use the zero-load M/M/1 slope `1 / capacity`.
    pub fn for_capacity(kind: CostKind, capacity: f64, rho: f64) -> Result<Self> {
        match kind {
            CostKind::Mm1 => Self::mm1_with_knee(capacity, rho),
            CostKind::Linear => {
                if !(capacity.is_finite() && capacity > 0.0) {
                    return Err(Error::Domain(format!(
                        "capacity must be positive, got {capacity}"
                    )));
                }
                Self::linear(1.0 / capacity)
            }
        }
    }

    pub fn value(&self, load: f64) -> Result<f64> {
        check_load(load)?;
        Ok(self.value_unchecked(load))
    }

    pub fn deriv(&self, load: f64) -> Result<f64> {
        check_load(load)?;
        Ok(self.deriv_unchecked(load))
    }

    /// Cost value without the sign check. Callers guarantee `load >= 0`.
    pub(crate) fn value_unchecked(&self, load: f64) -> f64 {
        match *self {
            CostModel::Linear { slope } => slope * load,
            CostModel::Mm1 { capacity, rho } => {
                let knee = rho * capacity;
                if load <= knee {
                    load / (capacity - load)
                } else {
                    let (v, d1, d2) = mm1_at(capacity, knee);
                    let dx = load - knee;
                    v + d1 * dx + 0.5 * d2 * dx * dx
                }
            }
        }
    }

    pub(crate) fn deriv_unchecked(&self, load: f64) -> f64 {
        match *self {
            CostModel::Linear { slope } => slope,
            CostModel::Mm1 { capacity, rho } => {
                let knee = rho * capacity;
                if load <= knee {
                    let gap = capacity - load;
                    capacity / (gap * gap)
                } else {
                    let (_, d1, d2) = mm1_at(capacity, knee);
                    d1 + d2 * (load - knee)
                }
            }
        }
    }

    /// Central divided difference `(v(x + h) - v(x - h)) / 2h`, evaluated in a
    /// cancellation-free closed form where the model allows it. `x - h` may be
    /// slightly negative; both models extend analytically there.
    pub fn central_slope(&self, load: f64, h: f64) -> f64 {
        if h == 0.0 {
            return self.deriv_unchecked(load);
        }
        match *self {
            CostModel::Linear { slope } => slope,
            CostModel::Mm1 { capacity, rho } => {
                let knee = rho * capacity;
                if load + h <= knee {
                    // (x+h)/(c-x-h) - (x-h)/(c-x+h) = 2hc / ((c-x)^2 - h^2)
                    let gap = capacity - load;
                    capacity / (gap * gap - h * h)
                } else if load - h >= knee {
                    // divided difference of a quadratic is its derivative at the midpoint
                    self.deriv_unchecked(load)
                } else {
                    let lo = load - h;
                    let v_lo = if lo >= 0.0 {
                        self.value_unchecked(lo)
                    } else {
                        lo / (capacity - lo)
                    };
                    (self.value_unchecked(load + h) - v_lo) / (2.0 * h)
                }
            }
        }
    }
}

/// Value, first and second derivative of `x / (c - x)`.
fn mm1_at(capacity: f64, x: f64) -> (f64, f64, f64) {
    let gap = capacity - x;
    (
        x / gap,
        capacity / (gap * gap),
        2.0 * capacity / (gap * gap * gap),
    )
}

fn check_load(load: f64) -> Result<()> {
    if load.is_nan() || load < 0.0 {
        Err(Error::Domain(format!(
            "load must be non-negative, got {load}"
        )))
    } else {
        Ok(())
    }
}

/// Communication/computation emphasis of the weighted objective
/// `eta * J_comm + (1 - eta) * J_comp`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CostWeights {
    eta: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self { eta: 0.5 }
    }
}

impl CostWeights {
    pub fn new(eta: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eta) {
            return Err(Error::Config(format!("eta must lie in [0, 1], got {eta}")));
        }
        Ok(Self { eta })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    /// `(comm multiplier, comp multiplier)`.
    pub fn weighted_pair(&self) -> (f64, f64) {
        (self.eta, 1.0 - self.eta)
    }

    pub fn comm(&self) -> f64 {
        self.eta
    }

    pub fn comp(&self) -> f64 {
        1.0 - self.eta
    }
}
