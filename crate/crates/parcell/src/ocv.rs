//! Open-circuit-voltage curves.
//!
//! Every cell model carries an OCV(z) map from state of charge to rest
//! voltage. Two representations are supported: a polynomial in `z`, and a
//! monotone cubic interpolant (Fritsch-Carlson pchip) over a lookup table.
//! Both expose analytic derivatives; the polynomial to any order, the table
//! up to order 3 (the interpolant is piecewise cubic). Beyond that the table
//! returns [`Error::DerivativeUnavailable`] instead of garbage, which the
//! Lie-derivative analysis surfaces as a capability limit.
//!
//! Validated constructors enforce strict monotonicity by sampling and check
//! the derivative provider against a central difference of the value
//! provider. Analysis code that deliberately needs a degenerate curve (for
//! example a flat OCV, which destroys observability) can bypass validation
//! with [`OcvCurve::poly_unchecked`].

use crate::error::{Error, Result};

/// Highest derivative order a table-backed curve can provide.
pub const TABLE_MAX_DERIVATIVE: usize = 3;

const MONOTONE_SAMPLES: usize = 1001;
const FD_GRID: usize = 100;
const FD_STEP: f64 = 1e-5;
const FD_RTOL: f64 = 1e-6;

#[derive(Debug, Clone)]
enum Repr {
    /// Coefficients in ascending powers of z.
    Poly(Vec<f64>),
    Table(Pchip),
}

/// Open-circuit voltage as a function of state of charge, with derivatives.
#[derive(Debug, Clone)]
pub struct OcvCurve {
    repr: Repr,
}

impl OcvCurve {
    /// Builds a polynomial curve from coefficients in ascending powers of z.
    ///
    /// Validates strict monotonicity on [0, 1] by sampling 1001 points and
    /// cross-checks the analytic first derivative against a central
    /// difference on a 100-point grid.
    pub fn poly(coeffs: &[f64]) -> Result<Self> {
        if coeffs.is_empty() || coeffs.iter().any(|c| !c.is_finite()) {
            return Err(Error::InvalidTable(
                "polynomial coefficients must be a non-empty finite list".into(),
            ));
        }
        let curve = Self {
            repr: Repr::Poly(coeffs.to_vec()),
        };
        curve.validate()?;
        Ok(curve)
    }

    /// Builds a polynomial curve without monotonicity validation.
    ///
    /// Intended for observability studies that need degenerate curves (flat
    /// or locally flat OCV). Simulation and estimation accept such curves but
    /// inherit whatever pathology they encode.
    pub fn poly_unchecked(coeffs: &[f64]) -> Self {
        Self {
            repr: Repr::Poly(coeffs.to_vec()),
        }
    }

    /// Builds a monotone table curve through the given (z, v) knots using
    /// Fritsch-Carlson monotone cubic interpolation.
    ///
    /// Outside the knot range the curve extends linearly with the endpoint
    /// slope, staying C^1 and monotone. Knot abscissae must be strictly
    /// increasing and values strictly increasing.
    pub fn table(z: &[f64], v: &[f64]) -> Result<Self> {
        let curve = Self {
            repr: Repr::Table(Pchip::new(z, v)?),
        };
        curve.validate()?;
        Ok(curve)
    }

    /// The default curve: an NMC-like 7th order polynomial spanning
    /// 3.0 V to 4.2 V over z in [0, 1], strictly increasing with minimum
    /// slope 0.55 V per unit SOC.
    pub fn default_nmc() -> Self {
        Self::poly(&[
            3.0, 5.51817, -37.76394, 155.18703, -353.83666, 446.8842, -292.19146, 77.40265,
        ])
        .expect("default curve is valid by construction")
    }

    /// OCV value at the given state of charge.
    pub fn value(&self, z: f64) -> f64 {
        match &self.repr {
            Repr::Poly(c) => horner(c, z),
            Repr::Table(p) => p.eval(z, 0),
        }
    }

    /// d^order OCV / dz^order. Order 0 is the value itself.
    ///
    /// Polynomial curves support every order (high orders are exactly zero);
    /// table curves support orders 0 to 3.
    pub fn derivative(&self, order: usize, z: f64) -> Result<f64> {
        match &self.repr {
            Repr::Poly(c) => Ok(poly_derivative(c, order, z)),
            Repr::Table(p) => {
                if order > TABLE_MAX_DERIVATIVE {
                    Err(Error::DerivativeUnavailable {
                        order,
                        max: TABLE_MAX_DERIVATIVE,
                    })
                } else {
                    Ok(p.eval(z, order))
                }
            }
        }
    }

    /// First derivative dOCV/dz; available for every representation.
    pub fn slope(&self, z: f64) -> f64 {
        self.derivative(1, z)
            .expect("order 1 is supported by all representations")
    }

    /// Highest supported derivative order, or `None` if unlimited.
    pub fn max_derivative_order(&self) -> Option<usize> {
        match &self.repr {
            Repr::Poly(_) => None,
            Repr::Table(_) => Some(TABLE_MAX_DERIVATIVE),
        }
    }

    fn validate(&self) -> Result<()> {
        let mut prev = self.value(0.0);
        for i in 1..MONOTONE_SAMPLES {
            let z = i as f64 / (MONOTONE_SAMPLES - 1) as f64;
            let v = self.value(z);
            if !v.is_finite() || v <= prev {
                return Err(Error::NonMonotoneOcv { z });
            }
            prev = v;
        }
        for i in 0..FD_GRID {
            let raw = 0.005 + 0.99 * i as f64 / (FD_GRID - 1) as f64;
            let z = self.fd_safe_point(raw);
            let analytic = self.slope(z);
            let finite_diff = (self.value(z + FD_STEP) - self.value(z - FD_STEP)) / (2.0 * FD_STEP);
            if (analytic - finite_diff).abs() > FD_RTOL * analytic.abs().max(1.0) {
                return Err(Error::OcvDerivativeMismatch {
                    z,
                    analytic,
                    finite_diff,
                });
            }
        }
        Ok(())
    }

    /// Central differencing straddles table knots badly (the interpolant is
    /// only C^1 there), so nudge grid points off any knot before comparing.
    fn fd_safe_point(&self, z: f64) -> f64 {
        let Repr::Table(p) = &self.repr else {
            return z;
        };
        let margin = 25.0 * FD_STEP;
        for &knot in &p.z {
            if (z - knot).abs() < margin {
                return knot + margin;
            }
        }
        z
    }
}

fn horner(coeffs: &[f64], z: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, &c| acc * z + c)
}

fn poly_derivative(coeffs: &[f64], order: usize, z: f64) -> f64 {
    if order == 0 {
        return horner(coeffs, z);
    }
    if order >= coeffs.len() {
        return 0.0;
    }
    let mut c = coeffs.to_vec();
    for _ in 0..order {
        c = c
            .iter()
            .enumerate()
            .skip(1)
            .map(|(k, &ck)| k as f64 * ck)
            .collect();
    }
    horner(&c, z)
}

/// Monotone piecewise-cubic Hermite interpolant (Fritsch-Carlson knot slopes
/// with the standard one-sided edge rule).
#[derive(Debug, Clone)]
struct Pchip {
    z: Vec<f64>,
    v: Vec<f64>,
    d: Vec<f64>,
}

impl Pchip {
    fn new(z: &[f64], v: &[f64]) -> Result<Self> {
        if z.len() != v.len() {
            return Err(Error::InvalidTable(format!(
                "z has {} entries but v has {}",
                z.len(),
                v.len()
            )));
        }
        if z.len() < 2 {
            return Err(Error::InvalidTable("need at least 2 knots".into()));
        }
        if z.iter().chain(v.iter()).any(|x| !x.is_finite()) {
            return Err(Error::InvalidTable("non-finite knot".into()));
        }
        for i in 1..z.len() {
            if z[i] <= z[i - 1] {
                return Err(Error::InvalidTable(format!(
                    "z must be strictly increasing (violated at index {i})"
                )));
            }
            if v[i] <= v[i - 1] {
                return Err(Error::NonMonotoneOcv { z: z[i] });
            }
        }
        let d = knot_slopes(z, v);
        Ok(Self {
            z: z.to_vec(),
            v: v.to_vec(),
            d,
        })
    }

    /// Evaluates the interpolant or one of its derivatives (order 0..=3).
    ///
    /// Interior knots evaluate from the right-hand segment; the second and
    /// third derivatives are therefore right-continuous at knots. Outside the
    /// knot range the curve is linear, so orders 2 and 3 vanish there.
    fn eval(&self, z: f64, order: usize) -> f64 {
        let n = self.z.len();
        if z < self.z[0] {
            return match order {
                0 => self.v[0] + self.d[0] * (z - self.z[0]),
                1 => self.d[0],
                _ => 0.0,
            };
        }
        if z > self.z[n - 1] {
            return match order {
                0 => self.v[n - 1] + self.d[n - 1] * (z - self.z[n - 1]),
                1 => self.d[n - 1],
                _ => 0.0,
            };
        }
        let seg = self.z[..n - 1].partition_point(|&zk| zk <= z).max(1) - 1;
        let h = self.z[seg + 1] - self.z[seg];
        let s = (z - self.z[seg]) / h;
        let (y0, y1) = (self.v[seg], self.v[seg + 1]);
        let (hd0, hd1) = (h * self.d[seg], h * self.d[seg + 1]);
        let ds = match order {
            0 => {
                y0 * (2.0 * s.powi(3) - 3.0 * s.powi(2) + 1.0)
                    + y1 * (-2.0 * s.powi(3) + 3.0 * s.powi(2))
                    + hd0 * (s.powi(3) - 2.0 * s.powi(2) + s)
                    + hd1 * (s.powi(3) - s.powi(2))
            }
            1 => {
                y0 * (6.0 * s.powi(2) - 6.0 * s)
                    + y1 * (-6.0 * s.powi(2) + 6.0 * s)
                    + hd0 * (3.0 * s.powi(2) - 4.0 * s + 1.0)
                    + hd1 * (3.0 * s.powi(2) - 2.0 * s)
            }
            2 => {
                y0 * (12.0 * s - 6.0)
                    + y1 * (-12.0 * s + 6.0)
                    + hd0 * (6.0 * s - 4.0)
                    + hd1 * (6.0 * s - 2.0)
            }
            3 => 12.0 * y0 - 12.0 * y1 + 6.0 * hd0 + 6.0 * hd1,
            _ => unreachable!("table derivative orders are capped at 3"),
        };
        ds / h.powi(order as i32)
    }
}

/// Knot derivatives for monotone cubic interpolation: weighted harmonic mean
/// of adjacent secants in the interior, non-overshooting one-sided rule at
/// the edges.
fn knot_slopes(z: &[f64], v: &[f64]) -> Vec<f64> {
    let n = z.len();
    let h: Vec<f64> = (0..n - 1).map(|i| z[i + 1] - z[i]).collect();
    let m: Vec<f64> = (0..n - 1).map(|i| (v[i + 1] - v[i]) / h[i]).collect();
    if n == 2 {
        return vec![m[0], m[0]];
    }
    let mut d = vec![0.0; n];
    for k in 1..n - 1 {
        let (m0, m1) = (m[k - 1], m[k]);
        if m0 == 0.0 || m1 == 0.0 || (m0 > 0.0) != (m1 > 0.0) {
            d[k] = 0.0;
        } else {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / m0 + w2 / m1);
        }
    }
    d[0] = edge_slope(h[0], h[1], m[0], m[1]);
    d[n - 1] = edge_slope(h[n - 2], h[n - 3], m[n - 2], m[n - 3]);
    d
}

fn edge_slope(h0: f64, h1: f64, m0: f64, m1: f64) -> f64 {
    let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
    if d.signum() != m0.signum() {
        0.0
    } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
        3.0 * m0
    } else {
        d
    }
}
