//! Closed-form timing model of a flow straddling a steering change.
//!
//! Packet `S` lands in ring 0 at `T - eps` behind `n` other packets; the
//! table entry then moves, and packet `S + 1` lands in ring 1 at `T + eps`
//! behind `m` packets. With both rings drained at `R` packets per second,
//! the stack starts on `S` at `T - eps + n/R` and on `S + 1` at
//! `T + eps + m/R`. The flow is reordered when the first exceeds the second.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("service rate must be positive and finite, got {0}")]
    ServiceRate(f64),
    #[error("eps must be positive and finite, got {0}")]
    Eps(f64),
    #[error("ring size must be at least 1")]
    RingSize,
    #[error("{name} = {value} exceeds ring size - 1 = {max}")]
    Backlog { name: &'static str, value: usize, max: usize },
    #[error("migration time must be nonnegative and finite, got {0}")]
    Time(f64),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalyticParams {
    /// Instant of the steering change, seconds.
    pub t: f64,
    /// Half the gap between the two straddling arrivals, seconds.
    pub eps: f64,
    /// Packets queued ahead of `S` in ring 0.
    pub n: usize,
    /// Packets queued ahead of `S + 1` in ring 1.
    pub m: usize,
    pub service_rate: f64,
    pub ring_size: usize,
}

impl AnalyticParams {
    pub fn new(
        t: f64,
        eps: f64,
        n: usize,
        m: usize,
        service_rate: f64,
        ring_size: usize,
    ) -> Result<Self, AnalyticError> {
        let p = AnalyticParams {
            t,
            eps,
            n,
            m,
            service_rate,
            ring_size,
        };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<(), AnalyticError> {
        if !(self.service_rate.is_finite() && self.service_rate > 0.0) {
            return Err(AnalyticError::ServiceRate(self.service_rate));
        }
        if !(self.eps.is_finite() && self.eps > 0.0) {
            return Err(AnalyticError::Eps(self.eps));
        }
        if !(self.t.is_finite() && self.t >= 0.0) {
            return Err(AnalyticError::Time(self.t));
        }
        if self.ring_size == 0 {
            return Err(AnalyticError::RingSize);
        }
        let max = self.ring_size - 1;
        for (name, value) in [("n", self.n), ("m", self.m)] {
            if value > max {
                return Err(AnalyticError::Backlog { name, value, max });
            }
        }
        Ok(())
    }
}

/// Time the stack starts servicing `S`.
pub fn t_service_s(p: &AnalyticParams) -> f64 {
    p.t - p.eps + p.n as f64 / p.service_rate
}

/// Time the stack starts servicing `S + 1`.
pub fn t_service_s1(p: &AnalyticParams) -> f64 {
    p.t + p.eps + p.m as f64 / p.service_rate
}

/// True when `S + 1` is serviced strictly before `S`. Ties count as in order.
///
/// Evaluated as `(n - m) / R > 2 eps`, which is exact in the integer
/// backlog difference and avoids cancellation against `T`.
pub fn reorder_predicate(p: &AnalyticParams) -> bool {
    let diff = p.n as f64 - p.m as f64;
    diff > 2.0 * p.eps * p.service_rate
}

/// Largest achievable `t_service_s - t_service_s1`, reached at
/// `n = D - 1`, `m = 0`.
pub fn worst_case_margin(ring_size: usize, service_rate: f64, eps: f64) -> Result<f64, AnalyticError> {
    if ring_size == 0 {
        return Err(AnalyticError::RingSize);
    }
    if !(service_rate.is_finite() && service_rate > 0.0) {
        return Err(AnalyticError::ServiceRate(service_rate));
    }
    Ok((ring_size - 1) as f64 / service_rate - 2.0 * eps)
}
