//! Descriptor-form model of a parallel pack and its index-1 reduction.
//!
//! Stacking the cell states `x = [z_1, v_{c,1}, ..., z_n, v_{c,n}]` with the
//! branch currents `u = [I_1, ..., I_n]` gives the semi-explicit system
//!
//! ```text
//! ẋ = A11 x + A12 u
//! 0 = A21 x + A22 u + θ_OCV(x) + θ_I i_total
//! y = Hx x + Hu u + φ(x)
//! ```
//!
//! The algebraic rows encode terminal-voltage equality between cell 1 and
//! every other cell plus Kirchhoff's current law, so `A22` collects the
//! series resistances (first column `r1_1`, off-diagonal `-r1_j`, final row
//! of ones) and is nonsingular whenever the resistances are positive. That
//! makes the pack an index-1 system with the explicit branch-current solution
//!
//! ```text
//! u = -A22⁻¹ (A21 x + θ_OCV(x) + θ_I i_total)
//! ```
//!
//! and the reduced ODE `ẋ = M x + N θ_OCV(x) + g i_total` used by the
//! simulator and the observer.

use nalgebra::{DMatrix, DVector};

use crate::cell::{cell_output, CellParams, CellState};
use crate::error::{Error, Result};

/// Tolerance on per-cell terminal-voltage agreement at an algebraic solution.
const VOLTAGE_AGREEMENT_TOL: f64 = 1e-9;

/// Differential and algebraic states of the pack at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct PackState {
    /// Differential states, interleaved `[z_1, v_{c,1}, ..., z_n, v_{c,n}]`.
    pub x: DVector<f64>,
    /// Branch currents `[I_1, ..., I_n]` [A].
    pub u: DVector<f64>,
    /// Time [s].
    pub t: f64,
}

impl PackState {
    /// SOC of cell `k` (zero-based).
    pub fn z(&self, k: usize) -> f64 {
        self.x[2 * k]
    }

    /// RC-pair voltage of cell `k` (zero-based).
    pub fn v_c(&self, k: usize) -> f64 {
        self.x[2 * k + 1]
    }

    /// State of cell `k` as a [`CellState`].
    pub fn cell_state(&self, k: usize) -> CellState {
        CellState {
            z: self.z(k),
            v_c: self.v_c(k),
        }
    }

    /// Total pack current, the sum of branch currents [A].
    pub fn i_total(&self) -> f64 {
        self.u.sum()
    }
}

/// Immutable assembled pack model.
///
/// All descriptor blocks, the reduction matrices, and the LU factors of
/// `A22` are computed once at assembly; every operation afterwards is pure,
/// so a model can be shared freely across threads.
#[derive(Debug, Clone)]
pub struct PackModel {
    cells: Vec<CellParams>,
    e_mat: DMatrix<f64>,
    a11: DMatrix<f64>,
    a12: DMatrix<f64>,
    a21: DMatrix<f64>,
    a22: DMatrix<f64>,
    hx: DMatrix<f64>,
    hu: DMatrix<f64>,
    a_full: DMatrix<f64>,
    h_full: DMatrix<f64>,
    det_a22: f64,
    cond_a22: f64,
    a22_lu: nalgebra::linalg::LU<f64, nalgebra::Dyn, nalgebra::Dyn>,
    a22_inv: DMatrix<f64>,
    /// M = A11 - A12 A22⁻¹ A21 (2n×2n).
    pub(crate) m_red: DMatrix<f64>,
    /// N = -A12 A22⁻¹ (2n×n).
    pub(crate) n_red: DMatrix<f64>,
    /// g = N θ_I (2n).
    pub(crate) g_red: DVector<f64>,
    /// Measured-output x row of the raw form, `[0, 1, 0, ...]` (1×2n).
    pub(crate) hx_row: DVector<f64>,
    /// Measured-output u row of the raw form, `[r1_1, 0, ...]` (1×n).
    pub(crate) hu_row: DVector<f64>,
    /// x row of the reduced output, row 1 of Hx - Hu A22⁻¹ A21 (1×2n).
    pub(crate) c_row: DVector<f64>,
    /// θ_OCV row of the reduced output, row 1 of -Hu A22⁻¹ (1×n).
    pub(crate) m_row: DVector<f64>,
}

impl PackModel {
    /// Assembles the descriptor blocks for the given cells and verifies the
    /// structural preconditions: `A22` nonsingular (index-1) and
    /// `rank([A22; Hu]) = n` (impulse observability).
    pub fn assemble(cells: Vec<CellParams>) -> Result<Self> {
        let n = cells.len();
        if n < 2 {
            return Err(Error::TooFewCells(n));
        }

        let mut e_mat = DMatrix::zeros(3 * n, 3 * n);
        for i in 0..2 * n {
            e_mat[(i, i)] = 1.0;
        }

        let mut a11 = DMatrix::zeros(2 * n, 2 * n);
        let mut a12 = DMatrix::zeros(2 * n, n);
        for (k, cell) in cells.iter().enumerate() {
            a11[(2 * k + 1, 2 * k + 1)] = -1.0 / (cell.r2 * cell.c);
            a12[(2 * k, k)] = 1.0 / cell.q;
            a12[(2 * k + 1, k)] = 1.0 / cell.c;
        }

        let mut a21 = DMatrix::zeros(n, 2 * n);
        let mut a22 = DMatrix::zeros(n, n);
        for j in 1..n {
            a21[(j - 1, 1)] = 1.0;
            a21[(j - 1, 2 * j + 1)] = -1.0;
            a22[(j - 1, 0)] = cells[0].r1;
            a22[(j - 1, j)] = -cells[j].r1;
        }
        for j in 0..n {
            a22[(n - 1, j)] = 1.0;
        }

        let mut hx = DMatrix::zeros(n, 2 * n);
        let mut hu = DMatrix::zeros(n, n);
        for (k, cell) in cells.iter().enumerate() {
            hx[(k, 2 * k + 1)] = 1.0;
            hu[(k, k)] = cell.r1;
        }

        let det_a22 = a22.determinant();
        let bound = 1e-12 * a22.norm();
        if det_a22.abs() <= bound {
            return Err(Error::SingularA22 {
                det: det_a22.abs(),
                bound,
            });
        }

        let sv_a22 = a22.clone().svd(false, false).singular_values;
        let cond_a22 = sv_a22[0] / sv_a22[sv_a22.len() - 1];

        let mut stacked = DMatrix::zeros(2 * n, n);
        stacked.view_mut((0, 0), (n, n)).copy_from(&a22);
        stacked.view_mut((n, 0), (n, n)).copy_from(&hu);
        let sv = stacked.svd(false, false).singular_values;
        let rank = sv.iter().filter(|&&s| s > 1e-10 * sv[0]).count();
        if rank < n {
            return Err(Error::ImpulseUnobservable { rank, need: n });
        }

        let a22_lu = nalgebra::linalg::LU::new(a22.clone());
        let a22_inv = a22_lu
            .try_inverse()
            .expect("A22 verified nonsingular above");

        let m_red = &a11 - &a12 * &a22_inv * &a21;
        let n_red = -&a12 * &a22_inv;
        let mut theta_i = DVector::zeros(n);
        theta_i[n - 1] = -1.0;
        let g_red = &n_red * &theta_i;

        let hu_a22_inv = &hu * &a22_inv;
        let c_red = &hx - &hu_a22_inv * &a21;
        let hx_row = hx.row(0).transpose();
        let hu_row = hu.row(0).transpose();
        let c_row = c_red.row(0).transpose();
        let m_row = -hu_a22_inv.row(0).transpose();

        let mut a_full = DMatrix::zeros(3 * n, 3 * n);
        a_full.view_mut((0, 0), (2 * n, 2 * n)).copy_from(&a11);
        a_full.view_mut((0, 2 * n), (2 * n, n)).copy_from(&a12);
        a_full.view_mut((2 * n, 0), (n, 2 * n)).copy_from(&a21);
        a_full.view_mut((2 * n, 2 * n), (n, n)).copy_from(&a22);
        let mut h_full = DMatrix::zeros(n, 3 * n);
        h_full.view_mut((0, 0), (n, 2 * n)).copy_from(&hx);
        h_full.view_mut((0, 2 * n), (n, n)).copy_from(&hu);

        Ok(Self {
            cells,
            e_mat,
            a11,
            a12,
            a21,
            a22,
            hx,
            hu,
            a_full,
            h_full,
            det_a22,
            cond_a22,
            a22_lu,
            a22_inv,
            m_red,
            n_red,
            g_red,
            hx_row,
            hu_row,
            c_row,
            m_row,
        })
    }

    /// Number of cells.
    pub fn n(&self) -> usize {
        self.cells.len()
    }

    /// Cell parameters, in pack order.
    pub fn cells(&self) -> &[CellParams] {
        &self.cells
    }

    /// Singular mass matrix E = blockdiag(I_2n, 0_n).
    pub fn e_mat(&self) -> &DMatrix<f64> {
        &self.e_mat
    }

    /// Differential-state block of A (2n×2n).
    pub fn a11(&self) -> &DMatrix<f64> {
        &self.a11
    }

    /// Branch-current input block of A (2n×n).
    pub fn a12(&self) -> &DMatrix<f64> {
        &self.a12
    }

    /// Algebraic-constraint state block of A (n×2n).
    pub fn a21(&self) -> &DMatrix<f64> {
        &self.a21
    }

    /// Algebraic-constraint current block of A (n×n).
    pub fn a22(&self) -> &DMatrix<f64> {
        &self.a22
    }

    /// Output matrix block acting on x (n×2n).
    pub fn hx(&self) -> &DMatrix<f64> {
        &self.hx
    }

    /// Output matrix block acting on u, diag(r1_1..r1_n).
    pub fn hu(&self) -> &DMatrix<f64> {
        &self.hu
    }

    /// Assembled 3n×3n state matrix A.
    pub fn a_full(&self) -> &DMatrix<f64> {
        &self.a_full
    }

    /// Assembled n×3n output matrix H.
    pub fn h_full(&self) -> &DMatrix<f64> {
        &self.h_full
    }

    /// det(A22), exactly `r1_1 + r1_2` for a two-cell pack.
    pub fn det_a22(&self) -> f64 {
        self.det_a22
    }

    /// 2-norm condition number of A22.
    pub fn cond_a22(&self) -> f64 {
        self.cond_a22
    }

    /// Solves A22 v = rhs with the cached factorization.
    pub fn solve_a22(&self, rhs: &DVector<f64>) -> DVector<f64> {
        self.a22_lu
            .solve(rhs)
            .expect("A22 verified nonsingular at assembly")
    }

    /// A22⁻¹ as an explicit matrix.
    pub fn a22_inv(&self) -> &DMatrix<f64> {
        &self.a22_inv
    }

    /// θ_I = [0, ..., 0, -1]ᵀ, the total-current direction of the algebraic
    /// rows.
    pub fn theta_i(&self) -> DVector<f64> {
        let mut v = DVector::zeros(self.n());
        v[self.n() - 1] = -1.0;
        v
    }

    /// The nonlinearity θ(w, i_total) of the descriptor dynamics: zeros in
    /// the differential rows, OCV differences `OCV(z_1) - OCV(z_j)` in the
    /// voltage-equality rows, and `-i_total` in the Kirchhoff row.
    pub fn theta(&self, x: &DVector<f64>, i_total: f64) -> DVector<f64> {
        let n = self.n();
        let mut th = DVector::zeros(3 * n);
        let bottom = self.theta_ocv(x) + self.theta_i() * i_total;
        th.rows_mut(2 * n, n).copy_from(&bottom);
        th
    }

    /// The state-only part of the algebraic nonlinearity:
    /// `[OCV(z_1) - OCV(z_2), ..., OCV(z_1) - OCV(z_n), 0]ᵀ`.
    pub fn theta_ocv(&self, x: &DVector<f64>) -> DVector<f64> {
        let n = self.n();
        let ocv1 = self.cells[0].ocv.value(x[0]);
        let mut v = DVector::zeros(n);
        for j in 1..n {
            v[j - 1] = ocv1 - self.cells[j].ocv.value(x[2 * j]);
        }
        v
    }

    /// Output nonlinearity φ(x) = [OCV(z_1), ..., OCV(z_n)]ᵀ.
    pub fn phi(&self, x: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.n(),
            self.cells
                .iter()
                .enumerate()
                .map(|(k, c)| c.ocv.value(x[2 * k])),
        )
    }

    /// Explicit solution of the algebraic constraint:
    /// `u = -A22⁻¹ (A21 x + θ_OCV(x) + θ_I i_total)`.
    pub fn solve_algebraic(&self, x: &DVector<f64>, i_total: f64) -> DVector<f64> {
        let rhs = -(&self.a21 * x + self.theta_ocv(x) + self.theta_i() * i_total);
        self.solve_a22(&rhs)
    }

    /// Right-hand side of the reduced ODE,
    /// `ẋ = M x + N θ_OCV(x) + g i_total`.
    pub fn reduced_rhs(&self, x: &DVector<f64>, i_total: f64) -> DVector<f64> {
        &self.m_red * x + &self.n_red * self.theta_ocv(x) + &self.g_red * i_total
    }

    /// Terminal voltage of every cell at the given `(x, u)`.
    pub fn output_all_cells(&self, x: &DVector<f64>, u: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.n(),
            self.cells.iter().enumerate().map(|(k, cell)| {
                cell_output(
                    cell,
                    &CellState {
                        z: x[2 * k],
                        v_c: x[2 * k + 1],
                    },
                    u[k],
                )
            }),
        )
    }

    /// Pack terminal voltage with branch currents eliminated.
    ///
    /// Solves the algebraic constraint, evaluates every cell's terminal
    /// voltage there, verifies they agree to 1e-9 V, and returns the first.
    /// Disagreement indicates a corrupted state or severe ill-conditioning
    /// and is reported as [`Error::VoltageMismatch`].
    pub fn reduced_output(&self, x: &DVector<f64>, i_total: f64) -> Result<f64> {
        let u = self.solve_algebraic(x, i_total);
        let ys = self.output_all_cells(x, &u);
        check_voltage_agreement(&ys)?;
        Ok(ys[0])
    }

    /// Residual of the algebraic rows at `(x, u)`:
    /// `A21 x + A22 u + θ_OCV(x) + θ_I i_total`. Zero (to solver accuracy)
    /// exactly when `u` solves the constraint for this `x`.
    pub fn algebraic_residual(
        &self,
        x: &DVector<f64>,
        u: &DVector<f64>,
        i_total: f64,
    ) -> DVector<f64> {
        &self.a21 * x + &self.a22 * u + self.theta_ocv(x) + self.theta_i() * i_total
    }

    /// Measured scalar output (cell 1's terminal voltage) at explicit
    /// `(x, u)`: `hx_row·x + hu_row·u + OCV(z_1)`.
    pub fn measured_output(&self, x: &DVector<f64>, u: &DVector<f64>) -> f64 {
        self.hx_row.dot(x) + self.hu_row.dot(u) + self.cells[0].ocv.value(x[0])
    }

    /// Feedthrough of the reduced measured output: dy/d(i_total) with x held
    /// fixed, equal to the parallel combination of the series resistances for
    /// a two-cell pack.
    pub fn output_feedthrough(&self) -> f64 {
        let mut v = DVector::zeros(self.n());
        v[self.n() - 1] = -1.0;
        self.m_row.dot(&v)
    }

    /// Plain-text dump of every descriptor block, row-major, full precision.
    pub fn matrix_dump(&self) -> String {
        let mut out = String::new();
        for (name, m) in [
            ("E", &self.e_mat),
            ("A11", &self.a11),
            ("A12", &self.a12),
            ("A21", &self.a21),
            ("A22", &self.a22),
            ("Hx", &self.hx),
            ("Hu", &self.hu),
        ] {
            out.push_str(&format!("{name} {}x{}\n", m.nrows(), m.ncols()));
            for i in 0..m.nrows() {
                let row: Vec<String> = (0..m.ncols()).map(|j| format!("{}", m[(i, j)])).collect();
                out.push_str(&row.join(" "));
                out.push('\n');
            }
            out.push('\n');
        }
        out
    }
}

fn check_voltage_agreement(ys: &DVector<f64>) -> Result<()> {
    let spread = ys.max() - ys.min();
    if spread > VOLTAGE_AGREEMENT_TOL {
        return Err(Error::VoltageMismatch {
            spread,
            tol: VOLTAGE_AGREEMENT_TOL,
        });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cell::CellParams;
    use crate::ocv::OcvCurve;
    use approx::{assert_abs_diff_eq, assert_relative_eq};

    fn demo_cells() -> Vec<CellParams> {
        let curve = OcvCurve::default_nmc();
        vec![
            CellParams::new(0.0025, 0.004, 1500.0, 2.3 * 3600.0, curve.clone()).unwrap(),
            CellParams::new(0.0015, 0.0035, 2000.0, 2.0 * 3600.0, curve).unwrap(),
        ]
    }

    fn demo_pack() -> PackModel {
        PackModel::assemble(demo_cells()).unwrap()
    }

    fn x_of(states: &[(f64, f64)]) -> DVector<f64> {
        DVector::from_iterator(2 * states.len(), states.iter().flat_map(|&(z, vc)| [z, vc]))
    }

    #[test]
    fn two_cell_blocks_match_expected_pattern_exactly() {
        let p = demo_pack();
        assert_eq!(p.a22(), &DMatrix::from_row_slice(2, 2, &[0.0025, -0.0015, 1.0, 1.0]));
        assert_eq!(p.det_a22(), 0.004);
        assert_eq!(p.a21(), &DMatrix::from_row_slice(2, 4, &[0.0, 1.0, 0.0, -1.0, 0.0, 0.0, 0.0, 0.0]));
        assert_eq!(p.hu(), &DMatrix::from_row_slice(2, 2, &[0.0025, 0.0, 0.0, 0.0015]));
        assert_eq!(p.hx(), &DMatrix::from_row_slice(2, 4, &[0.0, 1.0, 0.0, 0.0, 0.0, 0.0, 0.0, 1.0]));
        assert_eq!(p.a11()[(1, 1)], -1.0 / 6.0);
        assert_eq!(p.a11()[(3, 3)], -1.0 / 7.0);
        assert_eq!(p.a12()[(0, 0)], 1.0 / 8280.0);
        assert_eq!(p.a12()[(3, 1)], 1.0 / 2000.0);
        // E is exact: identity over x, zero over u
        for i in 0..6 {
            for j in 0..6 {
                let want = if i == j && i < 4 { 1.0 } else { 0.0 };
                assert_eq!(p.e_mat()[(i, j)], want);
            }
        }
    }

    #[test]
    fn unit_resistance_pack_det_is_two() {
        let curve = OcvCurve::default_nmc();
        let cells = vec![
            CellParams::new(1.0, 0.004, 1500.0, 8280.0, curve.clone()).unwrap(),
            CellParams::new(1.0, 0.0035, 2000.0, 7200.0, curve).unwrap(),
        ];
        let p = PackModel::assemble(cells).unwrap();
        assert_eq!(p.a22(), &DMatrix::from_row_slice(2, 2, &[1.0, -1.0, 1.0, 1.0]));
        assert_eq!(p.det_a22(), 2.0);
    }

    #[test]
    fn three_cell_a22_matches_cofactor_determinant() {
        let curve = OcvCurve::default_nmc();
        let (a, b, c) = (0.0025, 0.0015, 0.002);
        let cells = vec![
            CellParams::new(a, 0.004, 1500.0, 8280.0, curve.clone()).unwrap(),
            CellParams::new(b, 0.0035, 2000.0, 7200.0, curve.clone()).unwrap(),
            CellParams::new(c, 0.003, 1800.0, 7500.0, curve).unwrap(),
        ];
        let p = PackModel::assemble(cells).unwrap();
        let want = DMatrix::from_row_slice(
            3,
            3,
            &[a, -b, 0.0, a, 0.0, -c, 1.0, 1.0, 1.0],
        );
        assert_eq!(p.a22(), &want);
        // cofactor expansion of the 3x3 pattern: a*b + a*c + b*c
        let det_expected = a * b + a * c + b * c;
        assert_relative_eq!(p.det_a22(), det_expected, max_relative = 1e-14);
    }

    #[test]
    fn single_cell_rejected() {
        let curve = OcvCurve::default_nmc();
        let cells = vec![CellParams::new(0.0025, 0.004, 1500.0, 8280.0, curve).unwrap()];
        assert!(matches!(
            PackModel::assemble(cells),
            Err(Error::TooFewCells(1))
        ));
    }

    #[test]
    fn duplicate_r1_values_are_fine() {
        let curve = OcvCurve::default_nmc();
        let cells = vec![
            CellParams::new(0.002, 0.004, 1500.0, 8280.0, curve.clone()).unwrap(),
            CellParams::new(0.002, 0.0035, 2000.0, 7200.0, curve).unwrap(),
        ];
        let p = PackModel::assemble(cells).unwrap();
        assert_eq!(p.det_a22(), 0.004);
    }

    #[test]
    fn theta_collects_ocv_differences_and_total_current() {
        let curve = OcvCurve::poly(&[3.0, 1.0]).unwrap();
        let cells = vec![
            CellParams::new(0.0025, 0.004, 1500.0, 8280.0, curve.clone()).unwrap(),
            CellParams::new(0.0015, 0.0035, 2000.0, 7200.0, curve).unwrap(),
        ];
        let p = PackModel::assemble(cells).unwrap();
        // OCV(0.8)=3.8, OCV(0.7)=3.7 with the linear curve
        let x = x_of(&[(0.8, 0.0), (0.7, 0.0)]);
        let th = p.theta(&x, 5.0);
        assert_eq!(th.len(), 6);
        for i in 0..4 {
            assert_eq!(th[i], 0.0);
        }
        assert_relative_eq!(th[4], 0.1, max_relative = 1e-12);
        assert_eq!(th[5], -5.0);
    }

    #[test]
    fn theta_partial_equality_for_three_cells() {
        let curve = OcvCurve::default_nmc();
        let cells = vec![
            CellParams::new(0.0025, 0.004, 1500.0, 8280.0, curve.clone()).unwrap(),
            CellParams::new(0.0015, 0.0035, 2000.0, 7200.0, curve.clone()).unwrap(),
            CellParams::new(0.002, 0.003, 1800.0, 7500.0, curve).unwrap(),
        ];
        let p = PackModel::assemble(cells).unwrap();
        let x = x_of(&[(0.4, 0.0), (0.4, 0.0), (0.55, 0.0)]);
        let th = p.theta(&x, 0.0);
        assert_eq!(th[6], 0.0);
        let want = p.cells()[0].ocv.value(0.4) - p.cells()[2].ocv.value(0.55);
        assert_relative_eq!(th[7], want, max_relative = 1e-14);
    }

    #[test]
    fn phi_evaluates_each_cell_curve_and_preserves_order() {
        let p = demo_pack();
        let x = x_of(&[(0.4, 0.0), (0.5, 0.0)]);
        let phi = p.phi(&x);
        let curve = OcvCurve::default_nmc();
        assert_eq!(phi[0], curve.value(0.4));
        assert_eq!(phi[1], curve.value(0.5));
        assert!(phi[0] > 3.0 && phi[1] < 4.2);
        assert!(phi[0] < phi[1], "monotone curve must order phi like z");

        let x_eq = x_of(&[(0.62, 0.0), (0.62, 0.0)]);
        let phi_eq = p.phi(&x_eq);
        assert_eq!(phi_eq[0], curve.value(0.62));
        assert_eq!(phi_eq[1], curve.value(0.62));
    }

    #[test]
    fn algebraic_solution_zeroes_the_constraint_residual() {
        let p = demo_pack();
        let x = x_of(&[(0.35, 0.004), (0.25, -0.002)]);
        for i_total in [-20.0, 0.0, 7.5] {
            let u = p.solve_algebraic(&x, i_total);
            let res = p.algebraic_residual(&x, &u, i_total);
            assert!(res.amax() < 1e-9, "residual {:?}", res);
            assert_abs_diff_eq!(u.sum(), i_total, epsilon = 1e-9);
        }
    }

    #[test]
    fn rest_imbalance_drives_antisymmetric_circulating_current() {
        let p = demo_pack();
        let x = x_of(&[(0.35, 0.0), (0.25, 0.0)]);
        let u = p.solve_algebraic(&x, 0.0);
        let delta = p.cells()[0].ocv.value(0.35) - p.cells()[1].ocv.value(0.25);
        assert!(delta > 0.0);
        // closed form for n=2: I1 = -delta / (r1_1 + r1_2), I2 = -I1
        assert_relative_eq!(u[0], -delta / 0.004, max_relative = 1e-12);
        assert_relative_eq!(u[1], delta / 0.004, max_relative = 1e-12);
        assert!(u[0] < 0.0 && u[1] > 0.0);
    }

    #[test]
    fn identical_cells_split_current_evenly() {
        let curve = OcvCurve::default_nmc();
        let cells = vec![
            CellParams::new(0.002, 0.004, 1500.0, 8280.0, curve.clone()).unwrap(),
            CellParams::new(0.002, 0.004, 1500.0, 8280.0, curve).unwrap(),
        ];
        let p = PackModel::assemble(cells).unwrap();
        let x = x_of(&[(0.5, 0.01), (0.5, 0.01)]);
        let u = p.solve_algebraic(&x, 8.0);
        assert_relative_eq!(u[0], 4.0, max_relative = 1e-12);
        assert_relative_eq!(u[1], 4.0, max_relative = 1e-12);
    }

    #[test]
    fn reduced_rhs_agrees_with_block_route() {
        let p = demo_pack();
        let x = x_of(&[(0.4, 0.01), (0.55, -0.02)]);
        for i_total in [-15.0, 0.0, 10.0] {
            let u = p.solve_algebraic(&x, i_total);
            let via_blocks = p.a11() * &x + p.a12() * &u;
            let via_reduction = p.reduced_rhs(&x, i_total);
            let scale = via_blocks.amax().max(1e-30);
            assert!(
                (&via_blocks - &via_reduction).amax() <= 1e-12 * scale.max(1.0),
                "routes disagree: {:?} vs {:?}",
                via_blocks,
                via_reduction
            );
        }
    }

    #[test]
    fn reduced_output_at_rest_is_ocv() {
        let curve = OcvCurve::default_nmc();
        let cells = vec![
            CellParams::new(0.0025, 0.004, 1500.0, 8280.0, curve.clone()).unwrap(),
            CellParams::new(0.0015, 0.0035, 2000.0, 7200.0, curve.clone()).unwrap(),
        ];
        let p = PackModel::assemble(cells).unwrap();
        let x = x_of(&[(0.5, 0.0), (0.5, 0.0)]);
        let y = p.reduced_output(&x, 0.0).unwrap();
        assert_relative_eq!(y, curve.value(0.5), max_relative = 1e-12);
    }

    #[test]
    fn feedthrough_is_parallel_resistance() {
        let p = demo_pack();
        // r1_1 r1_2 / (r1_1 + r1_2) = 0.0025*0.0015/0.004
        assert_relative_eq!(
            p.output_feedthrough(),
            0.0025 * 0.0015 / 0.004,
            max_relative = 1e-13
        );
        let x = x_of(&[(0.5, 0.0), (0.5, 0.0)]);
        let y0 = p.reduced_output(&x, 0.0).unwrap();
        let y1 = p.reduced_output(&x, 8.0).unwrap();
        assert_relative_eq!(y1 - y0, 8.0 * p.output_feedthrough(), max_relative = 1e-9);
    }

    #[test]
    fn voltage_agreement_check_trips_on_inconsistent_branch_currents() {
        let p = demo_pack();
        let x = x_of(&[(0.4, 0.0), (0.5, 0.0)]);
        let mut u = p.solve_algebraic(&x, 5.0);
        u[0] += 1.0;
        let ys = p.output_all_cells(&x, &u);
        assert!(matches!(
            super::check_voltage_agreement(&ys),
            Err(Error::VoltageMismatch { .. })
        ));
    }

    #[test]
    fn measured_output_equals_cell_one_terminal_voltage() {
        let p = demo_pack();
        let x = x_of(&[(0.45, 0.003), (0.52, -0.001)]);
        let u = p.solve_algebraic(&x, 3.0);
        let y_cells = p.output_all_cells(&x, &u);
        assert_relative_eq!(p.measured_output(&x, &u), y_cells[0], max_relative = 1e-14);
    }

    #[test]
    fn reduced_output_row_matches_direct_evaluation() {
        // h(x) = c_row·x + m_row·θ_OCV(x) + OCV(z1) must equal the per-cell
        // route at the algebraic solution with zero total current
        let p = demo_pack();
        let x = x_of(&[(0.37, -0.004), (0.61, 0.009)]);
        let h = p.c_row.dot(&x) + p.m_row.dot(&p.theta_ocv(&x)) + p.cells()[0].ocv.value(x[0]);
        let y = p.reduced_output(&x, 0.0).unwrap();
        assert_relative_eq!(h, y, max_relative = 1e-12);
    }

    #[test]
    fn pack_state_accessors_follow_interleaved_layout() {
        let s = PackState {
            x: x_of(&[(0.4, 0.01), (0.5, -0.02)]),
            u: DVector::from_row_slice(&[1.5, -1.5]),
            t: 12.0,
        };
        assert_eq!(s.z(0), 0.4);
        assert_eq!(s.v_c(0), 0.01);
        assert_eq!(s.z(1), 0.5);
        assert_eq!(s.v_c(1), -0.02);
        assert_eq!(s.i_total(), 0.0);
    }

    #[test]
    fn matrix_dump_round_trips_full_precision() {
        let p = demo_pack();
        let dump = p.matrix_dump();
        assert!(dump.contains("A22 2x2"));
        let line = dump
            .lines()
            .skip_while(|l| !l.starts_with("A22"))
            .nth(1)
            .unwrap();
        let first: f64 = line.split_whitespace().next().unwrap().parse().unwrap();
        assert_eq!(first, 0.0025);
    }
}
