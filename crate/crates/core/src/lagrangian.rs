//! Flow maps and the Lagrangian form of the system.
//!
//! Matrix fields are `3 x 3` at every node; in two dimensions the third row
//! and column are those of the identity. `deformation[i][j] = dX_i / dy_j`.

use crate::diagnostics::LipschitzSamples;
use crate::error::{Error, Result};
use crate::grid::{ScalarField, TorusGrid, VectorField};
use crate::interp::{Band, TrigInterpolant};
use crate::spectral::{divergence, gradient, gradient_tensor, l2_norm, linf_grad, vector_l2_norm};
use crate::state::{FluidState, Params};

/// Nodal `3 x 3` matrix field, `m[i][j]` is entry `(i, j)`.
pub type MatrixField = [[ScalarField; 3]; 3];

/// Largest budget `int ||grad u||_inf` for which the Lagrangian machinery is valid.
pub const WINDOW: f64 = 0.5;

type M3 = [[f64; 3]; 3];

const ID: M3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn at(m: &MatrixField, idx: usize) -> M3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[i][j].as_slice()[idx];
        }
    }
    out
}

fn mat_from_fn(len: usize, f: impl Fn(usize) -> M3) -> MatrixField {
    let mut data = vec![vec![0.0; len]; 9];
    for idx in 0..len {
        let m = f(idx);
        for i in 0..3 {
            for j in 0..3 {
                data[3 * i + j][idx] = m[i][j];
            }
        }
    }
    let mut it = data.into_iter().map(ScalarField::from_vec);
    let mut row = || [it.next().unwrap(), it.next().unwrap(), it.next().unwrap()];
    [row(), row(), row()]
}

fn mul(a: &M3, b: &M3) -> M3 {
    let mut c = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    c
}

fn add(a: &M3, b: &M3, s: f64) -> M3 {
    let mut c = *a;
    for i in 0..3 {
        for j in 0..3 {
            c[i][j] += s * b[i][j];
        }
    }
    c
}

fn det(m: &M3) -> f64 {
    m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
}

/// Adjugate (transpose of the cofactor matrix); `m * adj(m) = det(m) I`.
fn adjugate(m: &M3) -> M3 {
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    [
        [c(1, 2, 1, 2), -c(0, 2, 1, 2), c(0, 1, 1, 2)],
        [-c(1, 2, 0, 2), c(0, 2, 0, 2), -c(0, 1, 0, 2)],
        [c(1, 2, 0, 1), -c(0, 2, 0, 1), c(0, 1, 0, 1)],
    ]
}

fn frobenius(m: &M3) -> f64 {
    m.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
}

fn max_abs_entry(m: &M3) -> f64 {
    m.iter().flatten().fold(0.0, |a: f64, v| a.max(v.abs()))
}

/// Flow map `X(t, .)` and its derived matrix fields.
#[derive(Clone, Debug)]
pub struct FlowMap {
    pub t: f64,
    /// `X(t, y) - y`, periodic.
    pub displacement: VectorField,
    /// `grad_y X`
    pub deformation: MatrixField,
    /// `A = (grad_y X)^{-1}`
    pub inverse: MatrixField,
    /// `J = det grad_y X`
    pub jacobian: ScalarField,
    /// `a = J A`
    pub cofactor: MatrixField,
    /// `int_0^t ||grad u||_inf`
    pub budget: f64,
}

impl FlowMap {
    pub fn identity(grid: &TorusGrid) -> Self {
        Self::from_displacement(grid, 0.0, VectorField::zeros(grid), 0.0)
    }

    /// Builds the matrix fields from a displacement by spectral
    /// differentiation and nodal inversion.
    pub fn from_displacement(grid: &TorusGrid, t: f64, displacement: VectorField, budget: f64) -> Self {
        let g = gradient_tensor(grid, &displacement);
        let len = grid.len();
        let deformation = mat_from_fn(len, |idx| add(&ID, &at(&g, idx), 1.0));
        let mut jac = vec![0.0; len];
        for (idx, j) in jac.iter_mut().enumerate() {
            *j = det(&at(&deformation, idx));
        }
        let cofactor = mat_from_fn(len, |idx| adjugate(&at(&deformation, idx)));
        let inverse = mat_from_fn(len, |idx| {
            let a = at(&cofactor, idx);
            let mut out = a;
            for row in out.iter_mut() {
                for v in row.iter_mut() {
                    *v /= jac[idx];
                }
            }
            out
        });
        Self {
            t,
            displacement,
            deformation,
            inverse,
            jacobian: ScalarField::from_vec(jac),
            cofactor,
            budget,
        }
    }

    pub fn within_window(&self) -> bool {
        self.budget <= WINDOW
    }

    /// Current positions `X(t, y)` at the nodes.
    pub fn positions(&self, grid: &TorusGrid) -> Vec<[f64; 3]> {
        (0..grid.len())
            .map(|idx| {
                let y = grid.node(idx);
                let d = self.displacement.at(idx);
                [y[0] + d[0], y[1] + d[1], y[2] + d[2]]
            })
            .collect()
    }

    /// `max_nodes max_entries |grad X A - I|`
    pub fn inverse_defect(&self) -> f64 {
        (0..self.jacobian.len())
            .map(|idx| max_abs_entry(&add(&mul(&at(&self.deformation, idx), &at(&self.inverse, idx)), &ID, -1.0)))
            .fold(0.0, f64::max)
    }

    /// `C = grad X - I = int_0^t grad_y u(X) dtau`
    fn strain_integral(&self, idx: usize) -> M3 {
        add(&at(&self.deformation, idx), &ID, -1.0)
    }
}

/// Flow maps at the snapshot times of a velocity history.
#[derive(Clone, Debug)]
pub struct FlowHistory {
    pub maps: Vec<FlowMap>,
    /// First time the budget reaches 1/2; infinite if never.
    pub crossing: f64,
}

impl FlowHistory {
    pub fn window_exceeded(&self) -> bool {
        self.maps.iter().any(|m| !m.within_window())
    }
}

/// Integrates `dX/dt = u(t, X)` from the identity with classical RK4,
/// `substeps` steps per snapshot interval. Velocity is evaluated by direct
/// trigonometric interpolation in the two-thirds band and is linear in time
/// between snapshots. Maps are returned for every snapshot with
/// `t <= t_end`; maps beyond the smallness window are kept and flagged.
pub fn integrate_flow_map(grid: &TorusGrid, history: &[FluidState], t_end: f64, substeps: usize) -> Result<FlowHistory> {
    if history.is_empty() {
        return Err(Error::InvalidArgument("velocity history is empty".into()));
    }
    if substeps == 0 {
        return Err(Error::InvalidArgument("substeps must be positive".into()));
    }
    for w in history.windows(2) {
        if !(w[1].t > w[0].t) {
            return Err(Error::InvalidArgument("snapshot times must increase".into()));
        }
    }
    let t0 = history[0].t;
    let interp = |s: &FluidState| TrigInterpolant::new(grid, &[&s.u[0], &s.u[1], &s.u[2]], Band::Dealiased);
    let dim = grid.dim();
    let len = grid.len();
    let mut pos: Vec<[f64; 3]> = (0..len).map(|i| grid.node(i)).collect();
    let mut lips = LipschitzSamples::default();
    lips.push(t0, linf_grad(grid, &history[0].u), 0.0);
    let mut maps = vec![FlowMap::from_displacement(grid, t0, VectorField::zeros(grid), 0.0)];
    let mut budget = 0.0;
    let mut crossing = f64::INFINITY;
    let mut current = interp(&history[0]);
    for w in history.windows(2) {
        if w[1].t > t_end + 1e-12 * t_end.abs().max(1.0) {
            break;
        }
        let next = interp(&w[1]);
        let span = w[1].t - w[0].t;
        let h = span / substeps as f64;
        let velocity = |alpha: f64, x: &[[f64; 3]]| -> Vec<[f64; 3]> {
            let it = TrigInterpolant::lerp(&current, &next, alpha);
            let mut buf = [0.0; 3];
            x.iter()
                .map(|p| {
                    it.eval_into(*p, &mut buf);
                    buf
                })
                .collect()
        };
        for sub in 0..substeps {
            let a0 = sub as f64 / substeps as f64;
            let a1 = (sub as f64 + 0.5) / substeps as f64;
            let a2 = (sub as f64 + 1.0) / substeps as f64;
            let shift = |base: &[[f64; 3]], k: &[[f64; 3]], c: f64| -> Vec<[f64; 3]> {
                base.iter()
                    .zip(k)
                    .map(|(p, v)| {
                        let mut q = *p;
                        for a in 0..dim {
                            q[a] += c * v[a];
                        }
                        q
                    })
                    .collect()
            };
            let k1 = velocity(a0, &pos);
            let k2 = velocity(a1, &shift(&pos, &k1, 0.5 * h));
            let k3 = velocity(a1, &shift(&pos, &k2, 0.5 * h));
            let k4 = velocity(a2, &shift(&pos, &k3, h));
            for i in 0..len {
                for a in 0..dim {
                    pos[i][a] += h / 6.0 * (k1[i][a] + 2.0 * k2[i][a] + 2.0 * k3[i][a] + k4[i][a]);
                }
            }
        }
        let g_prev = *lips.grad_u.last().unwrap();
        let g_next = linf_grad(grid, &w[1].u);
        lips.push(w[1].t, g_next, 0.0);
        let inc = 0.5 * span * (g_prev + g_next);
        if crossing.is_infinite() && budget + inc > WINDOW {
            let f = if inc > 0.0 { (WINDOW - budget) / inc } else { 1.0 };
            crossing = w[0].t + f * span;
        }
        budget += inc;
        let mut disp = VectorField::zeros(grid);
        for (i, p) in pos.iter().enumerate() {
            let y = grid.node(i);
            for a in 0..3 {
                disp[a].as_mut_slice()[i] = p[a] - y[a];
            }
        }
        maps.push(FlowMap::from_displacement(grid, w[1].t, disp, budget));
        current = next;
    }
    Ok(FlowHistory { maps, crossing })
}

/// Neumann partial sum of `A` compared with the direct inverse.
#[derive(Clone, Debug)]
pub struct SeriesReport {
    pub series: MatrixField,
    /// `max |A_series - A_direct|` over nodes and entries.
    pub discrepancy: f64,
    /// `b = max_nodes ||grad X - I||_F`
    pub strain_norm: f64,
    /// `b^{k+1} / (1 - b)`
    pub tail_bound: f64,
    pub budget: f64,
}

/// `sum_{k=0}^{k_max} (-C)^k` with `C = grad X - I`. The Frobenius norm is
/// submultiplicative, so the tail is below `b^{k_max+1} / (1 - b)` when `b < 1`.
pub fn deformation_series_a(fm: &FlowMap, k_max: usize) -> Result<SeriesReport> {
    if !fm.within_window() {
        return Err(Error::OutsideWindow { budget: fm.budget, t: fm.t });
    }
    let len = fm.jacobian.len();
    let mut b: f64 = 0.0;
    let mut discrepancy: f64 = 0.0;
    let series = mat_from_fn(len, |idx| {
        let c = fm.strain_integral(idx);
        let neg = add(&[[0.0; 3]; 3], &c, -1.0);
        let mut term = ID;
        let mut sum = ID;
        for _ in 0..k_max {
            term = mul(&term, &neg);
            sum = add(&sum, &term, 1.0);
        }
        sum
    });
    for idx in 0..len {
        b = b.max(frobenius(&fm.strain_integral(idx)));
        discrepancy = discrepancy.max(max_abs_entry(&add(&at(&series, idx), &at(&fm.inverse, idx), -1.0)));
    }
    let tail_bound = if b < 1.0 { b.powi(k_max as i32 + 1) / (1.0 - b) } else { f64::INFINITY };
    Ok(SeriesReport {
        series,
        discrepancy,
        strain_norm: b,
        tail_bound,
        budget: fm.budget,
    })
}

/// `max_i || sum_k d_k a_{ki} ||_2`
pub fn piola_residual(grid: &TorusGrid, fm: &FlowMap) -> f64 {
    (0..3)
        .map(|i| {
            let col = VectorField::new(fm.cofactor[0][i].clone(), fm.cofactor[1][i].clone(), fm.cofactor[2][i].clone());
            l2_norm(&divergence(grid, &col))
        })
        .fold(0.0, f64::max)
}

/// `max |J - 1|`
pub fn jacobian_deviation(fm: &FlowMap) -> f64 {
    fm.jacobian.as_slice().iter().fold(0.0, |a: f64, j| a.max((j - 1.0).abs()))
}

/// Composes every field of `state` with `X`: `f_bar(y) = f(X(y))`.
/// Density uses the full band; the other fields the two-thirds band.
pub fn pullback_state(grid: &TorusGrid, state: &FluidState, fm: &FlowMap) -> FluidState {
    pullback_with_positions(grid, state, &fm.positions(grid), fm.t)
}

fn pullback_with_positions(grid: &TorusGrid, state: &FluidState, pts: &[[f64; 3]], t: f64) -> FluidState {
    let rho = TrigInterpolant::new(grid, &[&state.rho], Band::Full).eval_points(pts);
    let rest = TrigInterpolant::new(
        grid,
        &[
            &state.u[0],
            &state.u[1],
            &state.u[2],
            &state.omega[0],
            &state.omega[1],
            &state.omega[2],
            &state.p,
        ],
        Band::Dealiased,
    )
    .eval_points(pts);
    let mut it = rest.into_iter();
    let mut next = || it.next().unwrap();
    let u = VectorField::new(next(), next(), next());
    let omega = VectorField::new(next(), next(), next());
    FluidState {
        t,
        rho: rho.into_iter().next().unwrap(),
        u,
        omega,
        p: next(),
    }
}

/// Lagrangian differential operators twisted by a matrix field `A`.
pub struct TwistedOps<'a> {
    grid: &'a TorusGrid,
    a: &'a MatrixField,
}

impl<'a> TwistedOps<'a> {
    pub fn new(grid: &'a TorusGrid, a: &'a MatrixField) -> Self {
        Self { grid, a }
    }

    /// `(A v)_i = sum_j A_ij v_j`
    fn mat_vec(&self, v: &VectorField, transpose: bool) -> VectorField {
        let len = v.len();
        let z = || ScalarField::from_vec(vec![0.0; len]);
        let mut out = VectorField::new(z(), z(), z());
        for idx in 0..len {
            let m = at(self.a, idx);
            let x = v.at(idx);
            for i in 0..3 {
                let s = if transpose {
                    m[0][i] * x[0] + m[1][i] * x[1] + m[2][i] * x[2]
                } else {
                    m[i][0] * x[0] + m[i][1] * x[1] + m[i][2] * x[2]
                };
                out[i].as_mut_slice()[idx] = s;
            }
        }
        out
    }

    /// `grad_u f = A^T grad_y f`
    pub fn grad(&self, f: &ScalarField) -> VectorField {
        self.mat_vec(&gradient(self.grid, f), true)
    }

    /// `div_u v = Div_y(A v)`
    pub fn div(&self, v: &VectorField) -> ScalarField {
        divergence(self.grid, &self.mat_vec(v, false))
    }

    /// `Delta_u f = div_u grad_u f`
    pub fn laplacian(&self, f: &ScalarField) -> ScalarField {
        self.div(&self.grad(f))
    }

    pub fn vector_laplacian(&self, v: &VectorField) -> VectorField {
        VectorField::new(self.laplacian(&v[0]), self.laplacian(&v[1]), self.laplacian(&v[2]))
    }

    /// `(curl_u v)_i = eps_ijk sum_s A_sj d_s v_k`
    pub fn curl(&self, v: &VectorField) -> VectorField {
        // D[k][j] = sum_s A_sj d_s v_k, the Eulerian gradient pulled back.
        let d: Vec<VectorField> = (0..3).map(|k| self.grad(&v[k])).collect();
        VectorField::new(
            d[2][1].add_scaled(-1.0, &d[1][2]),
            d[0][2].add_scaled(-1.0, &d[2][0]),
            d[1][0].add_scaled(-1.0, &d[0][1]),
        )
    }

    /// `grad_u div_u v`
    pub fn grad_div(&self, v: &VectorField) -> VectorField {
        self.grad(&self.div(v))
    }
}

/// `L^2` residual norms of the four Lagrangian equations over one interval.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct ResidualRow {
    pub t: f64,
    pub momentum: f64,
    pub divergence: f64,
    pub microrotation: f64,
    pub density: f64,
}

impl ResidualRow {
    fn max(&self, o: &Self) -> Self {
        Self {
            t: self.t.max(o.t),
            momentum: self.momentum.max(o.momentum),
            divergence: self.divergence.max(o.divergence),
            microrotation: self.microrotation.max(o.microrotation),
            density: self.density.max(o.density),
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct ResidualReport {
    pub rows: Vec<ResidualRow>,
    pub max: ResidualRow,
}

fn avg(a: &VectorField, b: &VectorField) -> VectorField {
    a.scaled(0.5).add_scaled(0.5, b)
}

fn avg_mat(a: &MatrixField, b: &MatrixField) -> MatrixField {
    let f = |i: usize, j: usize| a[i][j].scaled(0.5).add_scaled(0.5, &b[i][j]);
    [[f(0, 0), f(0, 1), f(0, 2)], [f(1, 0), f(1, 1), f(1, 2)], [f(2, 0), f(2, 1), f(2, 2)]]
}

/// Residuals of
/// `rho u_t - nu Delta_u u + grad_u P - 2 chi curl_u w`,
/// `div_u u`,
/// `rho w_t - gamma Delta_u w - kappa grad_u div_u w + 4 chi w - 2 chi curl_u u`,
/// `rho_t`
/// for the pulled-back Eulerian states, centred at interval midpoints.
///
/// `states[n]` and `maps[n]` must share a time. The pressure stored with
/// `states[n]` is taken to sit at the midpoint of `[t_{n-1}, t_n]`, which is
/// the solver's convention when snapshots are taken every step.
pub fn lagrangian_residual(
    grid: &TorusGrid,
    states: &[FluidState],
    maps: &[FlowMap],
    p: &Params,
) -> Result<ResidualReport> {
    if states.len() < 2 || states.len() != maps.len() {
        return Err(Error::InvalidArgument(format!(
            "need at least two aligned snapshots, got {} states and {} maps",
            states.len(),
            maps.len()
        )));
    }
    for (s, m) in states.iter().zip(maps) {
        if (s.t - m.t).abs() > 1e-12 * s.t.abs().max(1.0) {
            return Err(Error::InvalidArgument(format!("state time {} does not match map time {}", s.t, m.t)));
        }
        if !m.within_window() {
            return Err(Error::OutsideWindow { budget: m.budget, t: m.t });
        }
    }
    let lag: Vec<FluidState> = states.iter().zip(maps).map(|(s, m)| pullback_state(grid, s, m)).collect();

    // Per-snapshot spatial terms.
    struct Terms {
        visc_u: VectorField,
        curl_w: VectorField,
        div_u: ScalarField,
        visc_w: VectorField,
        grad_div_w: VectorField,
        curl_u: VectorField,
    }
    let terms: Vec<Terms> = lag
        .iter()
        .zip(maps)
        .map(|(l, m)| {
            let ops = TwistedOps::new(grid, &m.inverse);
            Terms {
                visc_u: ops.vector_laplacian(&l.u),
                curl_w: ops.curl(&l.omega),
                div_u: ops.div(&l.u),
                visc_w: ops.vector_laplacian(&l.omega),
                grad_div_w: ops.grad_div(&l.omega),
                curl_u: ops.curl(&l.u),
            }
        })
        .collect();

    let nu = p.nu();
    let mut report = ResidualReport::default();
    for n in 1..lag.len() {
        let dt = lag[n].t - lag[n - 1].t;
        let (l0, l1) = (&lag[n - 1], &lag[n]);
        let (t0, t1) = (&terms[n - 1], &terms[n]);
        let rho_mid = l0.rho.scaled(0.5).add_scaled(0.5, &l1.rho);
        let u_t = l1.u.add_scaled(-1.0, &l0.u).scaled(1.0 / dt);
        let w_t = l1.omega.add_scaled(-1.0, &l0.omega).scaled(1.0 / dt);

        let mid_a = avg_mat(&maps[n - 1].inverse, &maps[n].inverse);
        let mid_disp = avg(&maps[n - 1].displacement, &maps[n].displacement);
        let mid_pts: Vec<[f64; 3]> = (0..grid.len())
            .map(|i| {
                let y = grid.node(i);
                let d = mid_disp.at(i);
                [y[0] + d[0], y[1] + d[1], y[2] + d[2]]
            })
            .collect();
        let p_bar = pullback_with_positions(grid, &states[n], &mid_pts, 0.5 * (l0.t + l1.t)).p;
        let grad_p = TwistedOps::new(grid, &mid_a).grad(&p_bar);

        let mom = u_t
            .mul_scalar(&rho_mid)
            .add_scaled(-nu, &avg(&t0.visc_u, &t1.visc_u))
            .add_scaled(1.0, &grad_p)
            .add_scaled(-2.0 * p.chi, &avg(&t0.curl_w, &t1.curl_w));
        let div = t0.div_u.scaled(0.5).add_scaled(0.5, &t1.div_u);
        let micro = w_t
            .mul_scalar(&rho_mid)
            .add_scaled(-p.gamma, &avg(&t0.visc_w, &t1.visc_w))
            .add_scaled(-p.kappa, &avg(&t0.grad_div_w, &t1.grad_div_w))
            .add_scaled(4.0 * p.chi, &avg(&l0.omega, &l1.omega))
            .add_scaled(-2.0 * p.chi, &avg(&t0.curl_u, &t1.curl_u));
        let rho_t = l1.rho.add_scaled(-1.0, &l0.rho).scaled(1.0 / dt);
        let row = ResidualRow {
            t: 0.5 * (l0.t + l1.t),
            momentum: vector_l2_norm(&mom),
            divergence: l2_norm(&div),
            microrotation: vector_l2_norm(&micro),
            density: l2_norm(&rho_t),
        };
        report.max = report.max.max(&row);
        report.rows.push(row);
    }
    Ok(report)
}

/// `delta A = A_2 - A_1` by the telescoped Neumann series together with the
/// direct difference.
#[derive(Clone, Debug)]
pub struct DeltaAReport {
    pub series: MatrixField,
    pub direct: MatrixField,
    /// `max |series - direct|`
    pub discrepancy: f64,
    /// Sum of the two geometric tails.
    pub tail_bound: f64,
    /// `max_nodes ||delta A||_F`
    pub max_norm: f64,
    /// `||delta A||_2` with the Frobenius norm pointwise.
    pub l2_norm: f64,
}

/// `delta A = sum_{k=1}^{k_max} (-1)^k sum_{j<k} C_1^j (C_2 - C_1) C_2^{k-1-j}`,
/// where `C_i = grad X_i - I`.
pub fn delta_a(fm1: &FlowMap, fm2: &FlowMap, k_max: usize) -> Result<DeltaAReport> {
    for fm in [fm1, fm2] {
        if !fm.within_window() {
            return Err(Error::OutsideWindow { budget: fm.budget, t: fm.t });
        }
    }
    let len = fm1.jacobian.len();
    if fm2.jacobian.len() != len {
        return Err(Error::GridMismatch("flow maps live on different grids".into()));
    }
    let mut b1: f64 = 0.0;
    let mut b2: f64 = 0.0;
    let series = mat_from_fn(len, |idx| {
        let c1 = fm1.strain_integral(idx);
        let c2 = fm2.strain_integral(idx);
        let dc = add(&c2, &c1, -1.0);
        // powers C_i^0 .. C_i^{k_max - 1}
        let mut p1 = vec![ID];
        let mut p2 = vec![ID];
        for k in 1..k_max {
            p1.push(mul(&p1[k - 1], &c1));
            p2.push(mul(&p2[k - 1], &c2));
        }
        let mut sum = [[0.0; 3]; 3];
        for k in 1..=k_max {
            let sign = if k % 2 == 0 { 1.0 } else { -1.0 };
            for j in 0..k {
                let term = mul(&mul(&p1[j], &dc), &p2[k - 1 - j]);
                sum = add(&sum, &term, sign);
            }
        }
        sum
    });
    let direct = mat_from_fn(len, |idx| add(&at(&fm2.inverse, idx), &at(&fm1.inverse, idx), -1.0));
    let mut discrepancy: f64 = 0.0;
    let mut max_norm: f64 = 0.0;
    let mut sq = 0.0;
    for idx in 0..len {
        b1 = b1.max(frobenius(&fm1.strain_integral(idx)));
        b2 = b2.max(frobenius(&fm2.strain_integral(idx)));
        let d = at(&direct, idx);
        discrepancy = discrepancy.max(max_abs_entry(&add(&at(&series, idx), &d, -1.0)));
        let f = frobenius(&d);
        max_norm = max_norm.max(f);
        sq += f * f;
    }
    let tail = |b: f64| if b < 1.0 { b.powi(k_max as i32 + 1) / (1.0 - b) } else { f64::INFINITY };
    Ok(DeltaAReport {
        series,
        direct,
        discrepancy,
        tail_bound: tail(b1) + tail(b2),
        max_norm,
        l2_norm: (sq / len as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::TWO_PI;

    fn steady(grid: &TorusGrid, u: &VectorField, times: &[f64]) -> Vec<FluidState> {
        times
            .iter()
            .map(|&t| {
                let mut s = FluidState::rest(grid, 1.0);
                s.u = u.clone();
                s.t = t;
                s
            })
            .collect()
    }

    fn times(n: usize, t: f64) -> Vec<f64> {
        (0..=n).map(|i| t * i as f64 / n as f64).collect()
    }

    #[test]
    fn zero_velocity_gives_identity() {
        let g = TorusGrid::new(2, 16).unwrap();
        let h = integrate_flow_map(&g, &steady(&g, &VectorField::zeros(&g), &times(4, 0.4)), 1.0, 1).unwrap();
        let fm = h.maps.last().unwrap();
        assert_eq!(fm.displacement.max_magnitude(), 0.0);
        assert_eq!(jacobian_deviation(fm), 0.0);
        assert_eq!(piola_residual(&g, fm), 0.0);
        for i in 0..3 {
            for j in 0..3 {
                let e = if i == j { 1.0 } else { 0.0 };
                assert!(fm.inverse[i][j].as_slice().iter().all(|&v| v == e));
            }
        }
        let s = deformation_series_a(fm, 3).unwrap();
        assert_eq!(s.discrepancy, 0.0);
    }

    #[test]
    fn translation() {
        let g = TorusGrid::new(2, 16).unwrap();
        let u = VectorField::from_fn(&g, |_| [1.0, 0.0, 0.0]);
        let h = integrate_flow_map(&g, &steady(&g, &u, &times(3, 0.3)), 0.3, 1).unwrap();
        let fm = h.maps.last().unwrap();
        assert!((fm.t - 0.3).abs() < 1e-15);
        assert!(fm.displacement[0].as_slice().iter().all(|&d| (d - 0.3).abs() < 1e-14));
        assert!(fm.inverse_defect() < 1e-14);
        assert!(jacobian_deviation(fm) < 1e-14);
    }

    #[test]
    fn steady_shear_closed_form() {
        let g = TorusGrid::new(2, 64).unwrap();
        let u = VectorField::from_fn(&g, |x| [(TWO_PI * x[1]).sin(), 0.0, 0.0]);
        let h = integrate_flow_map(&g, &steady(&g, &u, &times(5, 0.5)), 0.5, 1).unwrap();
        let fm = h.maps.last().unwrap();
        let mut err: f64 = 0.0;
        for idx in 0..g.len() {
            let y = g.node(idx);
            err = err.max((fm.displacement[0].as_slice()[idx] - 0.5 * (TWO_PI * y[1]).sin()).abs());
            err = err.max((fm.deformation[0][1].as_slice()[idx] - 0.5 * TWO_PI * (TWO_PI * y[1]).cos()).abs());
            err = err.max(fm.deformation[1][0].as_slice()[idx].abs());
        }
        assert!(err < 1e-8, "{err}");
        assert!(jacobian_deviation(fm) < 1e-12);
        assert!(piola_residual(&g, fm) < 1e-8);
        assert!(fm.inverse_defect() < 1e-8);
        // B = 2 pi t reaches 1/2 at t = 1 / (4 pi)
        assert!((h.crossing - 1.0 / (2.0 * TWO_PI)).abs() < 1e-12);
        assert!(h.window_exceeded());
        assert!(deformation_series_a(fm, 4).is_err());
    }

    #[test]
    fn compressible_field_moves_the_jacobian() {
        let g = TorusGrid::new(2, 32).unwrap();
        let f = ScalarField::from_fn(&g, |x| 0.02 * (TWO_PI * x[0]).cos());
        let u = gradient(&g, &f);
        let h = integrate_flow_map(&g, &steady(&g, &u, &times(10, 0.1)), 0.1, 1).unwrap();
        assert!(jacobian_deviation(h.maps.last().unwrap()) > 1e-3);
    }

    #[test]
    fn series_partial_sums_obey_tail_bound() {
        let g = TorusGrid::new(2, 32).unwrap();
        let u = VectorField::from_fn(&g, |x| {
            let (a, b) = (TWO_PI * x[0], TWO_PI * x[1]);
            [a.sin() * b.cos(), -a.cos() * b.sin(), 0.0]
        });
        let h = integrate_flow_map(&g, &steady(&g, &u, &times(8, 0.02)), 0.02, 1).unwrap();
        let fm = h.maps.last().unwrap();
        for k in [0, 1, 3, 6, 10] {
            let s = deformation_series_a(fm, k).unwrap();
            assert!(s.discrepancy <= s.tail_bound + 1e-15, "k {k}: {} > {}", s.discrepancy, s.tail_bound);
        }
        let s0 = deformation_series_a(fm, 0).unwrap();
        assert!(s0.discrepancy <= fm.budget / (1.0 - fm.budget) + 1e-12);
    }

    #[test]
    fn delta_a_closed_forms() {
        let g = TorusGrid::new(2, 32).unwrap();
        let u = VectorField::from_fn(&g, |x| [0.5 * (TWO_PI * x[1]).sin(), 0.0, 0.0]);
        let ts = times(4, 0.1);
        let shear = integrate_flow_map(&g, &steady(&g, &u, &ts), 0.1, 1).unwrap();
        let rest = integrate_flow_map(&g, &steady(&g, &VectorField::zeros(&g), &ts), 0.1, 1).unwrap();
        let (fs, fr) = (shear.maps.last().unwrap(), rest.maps.last().unwrap());
        let same = delta_a(fs, fs, 10).unwrap();
        assert_eq!(same.max_norm, 0.0);
        assert_eq!(same.discrepancy, 0.0);
        let d = delta_a(fr, fs, 10).unwrap();
        // A_shear - I = [[0, -0.1 pi cos], [0, 0]]
        let mut err: f64 = 0.0;
        for idx in 0..g.len() {
            let y = g.node(idx);
            let exact = -0.1 * 0.5 * TWO_PI * (TWO_PI * y[1]).cos();
            err = err.max((d.series[0][1].as_slice()[idx] - exact).abs());
            err = err.max(d.series[1][0].as_slice()[idx].abs());
        }
        assert!(err < 1e-10, "{err}");
        assert!(d.discrepancy < 1e-12);
    }
}
