//! Nested forward-mode dual numbers with runtime depth.
//!
//! A depth-d jet over `nv` variables stores every mixed partial derivative
//! up to order d as a flat coefficient array of length `(nv+1)^d`,
//! interpreted recursively: block 0 is the value (a depth d-1 jet) and block
//! j (1..=nv) is the partial derivative with respect to variable j-1 (also a
//! depth d-1 jet). Lifting a jet one level deeper while seeding one variable
//! lets gradients of already-differentiated quantities be taken again, which
//! is exactly the shape of iterated Lie derivatives.
//!
//! Only the operations the observability analysis needs are implemented:
//! linear combinations, products, and composition with a scalar curve that
//! can report its own higher derivatives.

use crate::error::Result;
use crate::ocv::OcvCurve;

#[derive(Debug, Clone)]
pub(crate) struct Jet {
    nv: usize,
    depth: usize,
    c: Vec<f64>,
}

fn len_for(nv: usize, depth: usize) -> usize {
    (nv + 1).pow(depth as u32)
}

impl Jet {
    pub fn zero(nv: usize, depth: usize) -> Self {
        Self {
            nv,
            depth,
            c: vec![0.0; len_for(nv, depth)],
        }
    }

    /// Depth-1 jet for coordinate `i` at value `x`: value x, unit seed on i.
    pub fn variable(nv: usize, i: usize, x: f64) -> Self {
        let mut j = Self::zero(nv, 1);
        j.c[0] = x;
        j.c[1 + i] = 1.0;
        j
    }

    /// Plain value, all derivative structure stripped.
    pub fn value(&self) -> f64 {
        self.c[0]
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    fn block(&self, b: usize) -> &[f64] {
        let m = len_for(self.nv, self.depth - 1);
        &self.c[b * m..(b + 1) * m]
    }

    /// Gradient block `j` as a depth-1-lower jet: the partial derivative of
    /// this quantity with respect to variable `j` at the outermost level.
    pub fn grad(&self, j: usize) -> Jet {
        Jet {
            nv: self.nv,
            depth: self.depth - 1,
            c: self.block(1 + j).to_vec(),
        }
    }

    /// Raises the depth by one, seeding the new outermost derivative level
    /// so that it tracks d/d(variable `seed`): the value part is `self`, the
    /// `seed` gradient block is the constant 1, every other block is zero.
    pub fn lift(&self, seed: usize) -> Jet {
        let mut out = Jet::zero(self.nv, self.depth + 1);
        let m = self.c.len();
        out.c[..m].copy_from_slice(&self.c);
        out.c[(1 + seed) * m] = 1.0;
        out
    }

    pub fn add(&self, o: &Jet) -> Jet {
        debug_assert_eq!(self.c.len(), o.c.len());
        Jet {
            nv: self.nv,
            depth: self.depth,
            c: self.c.iter().zip(&o.c).map(|(a, b)| a + b).collect(),
        }
    }

    pub fn sub(&self, o: &Jet) -> Jet {
        debug_assert_eq!(self.c.len(), o.c.len());
        Jet {
            nv: self.nv,
            depth: self.depth,
            c: self.c.iter().zip(&o.c).map(|(a, b)| a - b).collect(),
        }
    }

    pub fn axpy(&mut self, s: f64, o: &Jet) {
        debug_assert_eq!(self.c.len(), o.c.len());
        for (a, b) in self.c.iter_mut().zip(&o.c) {
            *a += s * b;
        }
    }

    pub fn mul(&self, o: &Jet) -> Jet {
        debug_assert_eq!(self.depth, o.depth);
        let mut out = Jet::zero(self.nv, self.depth);
        mul_into(self.nv, self.depth, &self.c, &o.c, &mut out.c);
        out
    }

    /// Composes an OCV curve (or its `base_order`-th derivative) with this
    /// jet: `OCV^(base_order)(self)`, propagating the chain rule through all
    /// derivative levels. Needs curve derivatives up to
    /// `base_order + depth`, so table curves cap the usable nesting depth.
    pub fn compose_ocv(&self, curve: &OcvCurve, base_order: usize) -> Result<Jet> {
        let mut out = Jet::zero(self.nv, self.depth);
        compose_into(curve, base_order, self.nv, self.depth, &self.c, &mut out.c)?;
        Ok(out)
    }
}

/// out += a * b, all three depth-`depth` coefficient slices.
fn mul_into(nv: usize, depth: usize, a: &[f64], b: &[f64], out: &mut [f64]) {
    if depth == 0 {
        out[0] += a[0] * b[0];
        return;
    }
    let m = len_for(nv, depth - 1);
    // product rule per outermost level: value = av*bv, grad_j = av*bg_j + ag_j*bv
    mul_into(nv, depth - 1, &a[..m], &b[..m], &mut out[..m]);
    for j in 1..=nv {
        let (lo, hi) = (j * m, (j + 1) * m);
        mul_into(nv, depth - 1, &a[..m], &b[lo..hi], &mut out[lo..hi]);
        mul_into(nv, depth - 1, &a[lo..hi], &b[..m], &mut out[lo..hi]);
    }
}

/// out += OCV^(order)(z), chain rule through every level of z.
fn compose_into(
    curve: &OcvCurve,
    order: usize,
    nv: usize,
    depth: usize,
    z: &[f64],
    out: &mut [f64],
) -> Result<()> {
    if depth == 0 {
        out[0] += curve.derivative(order, z[0])?;
        return Ok(());
    }
    let m = len_for(nv, depth - 1);
    compose_into(curve, order, nv, depth - 1, &z[..m], &mut out[..m])?;
    let mut dval = vec![0.0; m];
    compose_into(curve, order + 1, nv, depth - 1, &z[..m], &mut dval)?;
    for j in 1..=nv {
        let (lo, hi) = (j * m, (j + 1) * m);
        mul_into(nv, depth - 1, &dval, &z[lo..hi], &mut out[lo..hi]);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn product_rule_first_order() {
        // d(x0*x1) = [x1, x0]
        let x0 = Jet::variable(2, 0, 3.0);
        let x1 = Jet::variable(2, 1, 5.0);
        let p = x0.mul(&x1);
        assert_eq!(p.value(), 15.0);
        assert_eq!(p.grad(0).value(), 5.0);
        assert_eq!(p.grad(1).value(), 3.0);
    }

    #[test]
    fn nested_lift_gives_second_derivatives() {
        // q(x) = x^3 at x=2: q'' = 6x = 12 via two derivative levels
        let x = Jet::variable(1, 0, 2.0);
        let lifted = x.lift(0);
        let q = lifted.mul(&lifted).mul(&lifted);
        let dq = q.grad(0); // depth-1 jet of q' tracked at base level
        assert_eq!(dq.value(), 12.0);
        assert_eq!(dq.grad(0).value(), 12.0);
    }

    #[test]
    fn compose_tracks_curve_chain_rule() {
        let curve = OcvCurve::default_nmc();
        let z = 0.4;
        let x = Jet::variable(1, 0, z);
        let y = x.compose_ocv(&curve, 0).unwrap();
        assert_eq!(y.value(), curve.value(z));
        assert_relative_eq!(
            y.grad(0).value(),
            curve.slope(z),
            max_relative = 1e-14
        );
        // second derivative through one lift
        let y2 = x.lift(0).compose_ocv(&curve, 0).unwrap();
        assert_relative_eq!(
            y2.grad(0).grad(0).value(),
            curve.derivative(2, z).unwrap(),
            max_relative = 1e-13
        );
    }

    #[test]
    fn compose_scaled_argument_chain_rule() {
        // y = OCV(2x): dy/dx = 2 OCV'(2x)
        let curve = OcvCurve::default_nmc();
        let x = Jet::variable(1, 0, 0.2);
        let mut doubled = Jet::zero(1, 1);
        doubled.axpy(2.0, &x);
        let y = doubled.compose_ocv(&curve, 0).unwrap();
        assert_relative_eq!(
            y.grad(0).value(),
            2.0 * curve.slope(0.4),
            max_relative = 1e-14
        );
    }

    #[test]
    fn table_curve_depth_limit_surfaces_as_error() {
        let c = OcvCurve::table(
            &[0.0, 0.25, 0.5, 0.75, 1.0],
            &[3.0, 3.4, 3.6, 3.9, 4.2],
        )
        .unwrap();
        let x = Jet::variable(1, 0, 0.4);
        // depth 3 needs curve order 3 at the innermost level: fine
        assert!(x.lift(0).lift(0).compose_ocv(&c, 0).is_ok());
        // depth 4 needs order 4: capability error
        assert!(x.lift(0).lift(0).lift(0).compose_ocv(&c, 0).is_err());
    }

    #[test]
    fn axpy_accumulates_linear_combinations() {
        let x0 = Jet::variable(2, 0, 1.5);
        let x1 = Jet::variable(2, 1, -2.0);
        let mut acc = Jet::zero(2, 1);
        acc.axpy(3.0, &x0);
        acc.axpy(-1.0, &x1);
        assert_eq!(acc.value(), 3.0 * 1.5 + 2.0);
        assert_eq!(acc.grad(0).value(), 3.0);
        assert_eq!(acc.grad(1).value(), -1.0);
    }
}
