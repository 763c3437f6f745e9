//! Gated, decay-regularized latent vector field and its fixed-step RK4 solver.
//!
//! `f(z) = (g(z) + 1) ⊙ h(z) − λ(z_s)·z` with
//! `h(z) = z + W₂ tanh(W₁z + b₁) + b₂`, `g(z) = σ(W_g z + b_g)` and
//! `λ(z_s) = softplus(W_a tanh(W_s z_s + b₁') + b₂')`, where `z_s` is the
//! stochastic block of the initial state and stays fixed over the horizon.

use serde::{Deserialize, Serialize};

use crate::autodiff::{BoundParams, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};
use crate::init::Initializer;

/// How the gate term enters the field.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateMode {
    /// `g = σ(W_g z + b_g)`.
    #[default]
    Learned,
    /// The `(g + 1)` factor is dropped: `f = h − λz`.
    Disabled,
    /// `g` is replaced by coefficients drawn uniformly from `(0, 1)` for every
    /// trajectory during training, and by their mean `0.5` at evaluation.
    Random,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FieldConfig {
    /// `m + c`.
    pub dim: usize,
    /// `c`, the width of the stochastic block.
    pub stoch_dim: usize,
    pub decay_hidden: usize,
    pub gate: GateMode,
    /// Zero the derivative of the stochastic block.
    pub freeze_stochastic: bool,
}

/// Parameter handles of the vector field.
#[derive(Clone, Debug)]
pub struct VectorFieldParams {
    pub config: FieldConfig,
    pub res_w1: ParamId,
    pub res_b1: ParamId,
    pub res_w2: ParamId,
    pub res_b2: ParamId,
    pub gate_w: ParamId,
    pub gate_b: ParamId,
    pub decay_w1: ParamId,
    pub decay_b1: ParamId,
    pub decay_w2: ParamId,
    pub decay_b2: ParamId,
}

impl VectorFieldParams {
    pub fn register(store: &mut ParamStore, config: FieldConfig, init: &mut Initializer) -> Result<Self> {
        let (d, c, k) = (config.dim, config.stoch_dim, config.decay_hidden);
        if c > d || k == 0 || d == 0 {
            return Err(Error::invalid(format!("invalid field dimensions dim={d} c={c} k={k}")));
        }
        Ok(VectorFieldParams {
            config,
            res_w1: store.add("field.res.w1", init.weight(d, d))?,
            res_b1: store.add("field.res.b1", init.bias(d, d))?,
            res_w2: store.add("field.res.w2", init.weight(d, d))?,
            res_b2: store.add("field.res.b2", init.bias(d, d))?,
            gate_w: store.add("field.gate.w", init.weight(d, d))?,
            gate_b: store.add("field.gate.b", init.bias(d, d))?,
            decay_w1: store.add("field.decay.w1", init.weight(c.max(1), k))?,
            decay_b1: store.add("field.decay.b1", init.bias(c.max(1), k))?,
            decay_w2: store.add("field.decay.w2", init.weight(k, 1))?,
            decay_b2: store.add("field.decay.b2", init.bias(k, 1))?,
        })
    }

    /// Binds the field to a tape for one trajectory. `z_s_init` is the
    /// stochastic block of the initial state (`1 × c`); `random_gate` supplies
    /// the coefficients for [`GateMode::Random`].
    pub fn bind(&self, tape: &mut Tape, p: &BoundParams, z_s_init: Var, random_gate: Option<Tensor>) -> Result<BoundField> {
        let cfg = self.config;
        let lambda = decay_coefficient(
            tape,
            z_s_init,
            p.var(self.decay_w1),
            p.var(self.decay_b1),
            p.var(self.decay_w2),
            p.var(self.decay_b2),
        )?;
        let mask = if cfg.freeze_stochastic && cfg.stoch_dim > 0 {
            Some(tape.constant(Tensor::from_fn(1, cfg.dim, |_, j| if j < cfg.stoch_dim { 0.0 } else { 1.0 })))
        } else {
            None
        };
        let gate = match cfg.gate {
            GateMode::Learned => GateTerm::Learned {
                w: p.var(self.gate_w),
                b: p.var(self.gate_b),
            },
            GateMode::Disabled => GateTerm::Disabled,
            GateMode::Random => {
                let g = random_gate.unwrap_or_else(|| Tensor::filled(1, cfg.dim, 0.5));
                if g.shape() != [1, cfg.dim] {
                    return Err(Error::ShapeMismatch {
                        op: "random gate",
                        lhs: g.shape(),
                        rhs: [1, cfg.dim],
                    });
                }
                GateTerm::Fixed(tape.constant(g))
            }
        };
        Ok(BoundField {
            w1: p.var(self.res_w1),
            b1: p.var(self.res_b1),
            w2: p.var(self.res_w2),
            b2: p.var(self.res_b2),
            gate,
            lambda,
            mask,
        })
    }
}

/// Anything that maps a `1 × D` state to its time derivative on a tape.
pub trait VectorField {
    fn eval(&self, tape: &mut Tape, z: Var) -> Result<Var>;
}

impl<F> VectorField for F
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    fn eval(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        self(tape, z)
    }
}

#[derive(Clone, Copy, Debug)]
enum GateTerm {
    Learned { w: Var, b: Var },
    Fixed(Var),
    Disabled,
}

/// The field with parameters recorded on a tape and `λ` already evaluated.
#[derive(Clone, Debug)]
pub struct BoundField {
    w1: Var,
    b1: Var,
    w2: Var,
    b2: Var,
    gate: GateTerm,
    pub lambda: Var,
    mask: Option<Var>,
}

/// Largest `f64` below 1.
const GATE_MAX: f64 = 1.0 - f64::EPSILON / 2.0;

fn open_sigmoid(x: f64) -> f64 {
    crate::autodiff::sigmoid(x).clamp(f64::MIN_POSITIVE, GATE_MAX)
}

fn open_sigmoid_grad(x: f64) -> f64 {
    let s = open_sigmoid(x);
    s * (1.0 - s)
}

/// `σ(z W_g + b_g)`, kept strictly inside `(0, 1)` where `f64` would round to an endpoint.
pub fn gate(tape: &mut Tape, z: Var, w: Var, b: Var) -> Result<Var> {
    let a = tape.matmul(z, w)?;
    let a = tape.add_bias(a, b)?;
    Ok(tape.map(a, open_sigmoid, open_sigmoid_grad))
}

/// `softplus(tanh(z_s W_s + b₁) W_a + b₂)`, a `1 × 1` strictly positive scalar.
pub fn decay_coefficient(tape: &mut Tape, z_s: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
    let z_s = if tape.value(z_s).cols() == 0 {
        tape.constant(Tensor::zeros(1, tape.value(w1).rows()))
    } else {
        z_s
    };
    let hdn = tape.matmul(z_s, w1)?;
    let hdn = tape.add_bias(hdn, b1)?;
    let hdn = tape.tanh(hdn);
    let out = tape.matmul(hdn, w2)?;
    let out = tape.add_bias(out, b2)?;
    let lambda = tape.softplus(out);
    if !tape.value(lambda).is_finite() {
        return Err(Error::NonFinite("vector field: decay term".into()));
    }
    Ok(lambda)
}

/// Residual block `z + W₂ tanh(W₁ z + b₁) + b₂`.
pub fn residual(tape: &mut Tape, z: Var, w1: Var, b1: Var, w2: Var, b2: Var) -> Result<Var> {
    let a = tape.matmul(z, w1)?;
    let a = tape.add_bias(a, b1)?;
    let a = tape.tanh(a);
    let a = tape.matmul(a, w2)?;
    let a = tape.add_bias(a, b2)?;
    tape.add(z, a)
}

impl VectorField for BoundField {
    fn eval(&self, tape: &mut Tape, z: Var) -> Result<Var> {
        let h = residual(tape, z, self.w1, self.b1, self.w2, self.b2)?;
        if !tape.value(h).is_finite() {
            return Err(Error::NonFinite("vector field: residual term".into()));
        }
        let gated = match self.gate {
            GateTerm::Disabled => h,
            GateTerm::Learned { w, b } => {
                let g = gate(tape, z, w, b)?;
                if !tape.value(g).is_finite() {
                    return Err(Error::NonFinite("vector field: gate term".into()));
                }
                let gh = tape.mul(g, h)?;
                tape.add(gh, h)?
            }
            GateTerm::Fixed(g) => {
                let gh = tape.mul(g, h)?;
                tape.add(gh, h)?
            }
        };
        let decay = tape.matmul(self.lambda, z)?;
        let f = tape.sub(gated, decay)?;
        let f = match self.mask {
            Some(m) => tape.mul(f, m)?,
            None => f,
        };
        if !tape.value(f).is_finite() {
            return Err(Error::NonFinite("vector field: output".into()));
        }
        Ok(f)
    }
}

/// One classical RK4 step; adds 4 to `nfe`. The field is autonomous, so stage
/// times are not passed.
pub fn rk4_step(tape: &mut Tape, field: &dyn VectorField, z: Var, dt: f64, nfe: &mut usize) -> Result<Var> {
    if !(dt > 0.0) {
        return Err(Error::invalid(format!("rk4 step size must be positive, got {dt}")));
    }
    let stage = |tape: &mut Tape, idx: usize, at: Var, nfe: &mut usize| -> Result<Var> {
        let k = field.eval(tape, at)?;
        *nfe += 1;
        if !tape.value(k).is_finite() {
            return Err(Error::NonFinite(format!("rk4 stage k{idx}")));
        }
        Ok(k)
    };
    let k1 = stage(tape, 1, z, nfe)?;
    let s = tape.scale(k1, dt / 2.0);
    let z2 = tape.add(z, s)?;
    let k2 = stage(tape, 2, z2, nfe)?;
    let s = tape.scale(k2, dt / 2.0);
    let z3 = tape.add(z, s)?;
    let k3 = stage(tape, 3, z3, nfe)?;
    let s = tape.scale(k3, dt);
    let z4 = tape.add(z, s)?;
    let k4 = stage(tape, 4, z4, nfe)?;
    let k2x = tape.scale(k2, 2.0);
    let k3x = tape.scale(k3, 2.0);
    let acc = tape.add(k1, k2x)?;
    let acc = tape.add(acc, k3x)?;
    let acc = tape.add(acc, k4)?;
    let inc = tape.scale(acc, dt / 6.0);
    tape.add(z, inc)
}

/// Trajectory recorded on a tape; states remain differentiable.
#[derive(Clone, Debug)]
pub struct TapeTrajectory {
    pub states: Vec<Var>,
    pub times: Vec<f64>,
    pub nfe: usize,
    pub substeps: usize,
}

/// Plain-value trajectory with solver accounting.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub times: Vec<f64>,
    pub nfe: usize,
    pub substeps: usize,
}

impl TapeTrajectory {
    pub fn values(&self, tape: &Tape) -> Trajectory {
        Trajectory {
            states: self.states.iter().map(|s| tape.value(*s).data().to_vec()).collect(),
            times: self.times.clone(),
            nfe: self.nfe,
            substeps: self.substeps,
        }
    }
}

/// Integrates from `z0` over `horizon` unit intervals with `substeps` RK4 steps
/// each, recording the state at every integer time `1..=horizon`.
pub fn solve_trajectory(
    tape: &mut Tape,
    field: &dyn VectorField,
    z0: Var,
    horizon: usize,
    substeps: usize,
) -> Result<TapeTrajectory> {
    if horizon == 0 || substeps == 0 {
        return Err(Error::invalid(format!(
            "solve_trajectory needs horizon ≥ 1 and substeps ≥ 1 (got {horizon}, {substeps})"
        )));
    }
    let dt = 1.0 / substeps as f64;
    let mut nfe = 0;
    let mut z = z0;
    let mut states = Vec::with_capacity(horizon);
    for interval in 0..horizon {
        for _ in 0..substeps {
            z = rk4_step(tape, field, z, dt, &mut nfe).map_err(|e| match e {
                Error::NonFinite(msg) => Error::NonFinite(format!("{msg} (interval {interval})")),
                other => other,
            })?;
        }
        states.push(z);
    }
    Ok(TapeTrajectory {
        states,
        times: (1..=horizon).map(|t| t as f64).collect(),
        nfe,
        substeps,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridSpec {
    pub resolution_x: usize,
    pub resolution_y: usize,
    /// `[x_min, x_max, y_min, y_max]` in projected coordinates; derived from the
    /// reference states (with a 10 % margin) when absent.
    pub bounds: Option<[f64; 4]>,
}

impl Default for GridSpec {
    fn default() -> Self {
        GridSpec {
            resolution_x: 20,
            resolution_y: 20,
            bounds: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Arrow {
    pub x: f64,
    pub y: f64,
    pub dx: f64,
    pub dy: f64,
}

/// Field sampled on a 2-D grid in the plane of the top two principal
/// directions of the reference states (coordinates centered on their mean).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FieldGrid {
    pub mean: Vec<f64>,
    pub basis: [Vec<f64>; 2],
    pub arrows: Vec<Arrow>,
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Top two unit principal directions of `states`, sign-normalized so the
/// largest-magnitude coordinate of each is positive.
pub fn principal_plane(states: &[Vec<f64>]) -> Result<(Vec<f64>, [Vec<f64>; 2])> {
    if states.len() < 3 {
        return Err(Error::invalid(format!(
            "field export needs at least 3 reference states, got {}",
            states.len()
        )));
    }
    let d = states[0].len();
    if d < 2 || states.iter().any(|s| s.len() != d) {
        return Err(Error::invalid("reference states must share a dimension ≥ 2"));
    }
    let n = states.len() as f64;
    let mut mean = vec![0.0; d];
    for s in states {
        for (m, v) in mean.iter_mut().zip(s) {
            *m += v / n;
        }
    }
    let mut cov = nalgebra::DMatrix::<f64>::zeros(d, d);
    for s in states {
        for i in 0..d {
            let di = s[i] - mean[i];
            for j in 0..d {
                cov[(i, j)] += di * (s[j] - mean[j]) / n;
            }
        }
    }
    let eig = nalgebra::SymmetricEigen::new(cov);
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[b].total_cmp(&eig.eigenvalues[a]).then(a.cmp(&b)));
    let pick = |k: usize| -> Vec<f64> {
        let col = eig.eigenvectors.column(order[k]);
        let mut v: Vec<f64> = col.iter().copied().collect();
        let big = v.iter().copied().fold(0.0_f64, |acc, x| if x.abs() > acc.abs() { x } else { acc });
        if big < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
        v
    };
    Ok((mean, [pick(0), pick(1)]))
}

/// Evaluates `field` on a grid of the principal plane. Each grid point is
/// lifted back as `mean + x·u₁ + y·u₂` and the derivative is projected onto
/// `(u₁, u₂)`.
pub fn export_field_grid(
    field: &dyn Fn(&[f64]) -> Result<Vec<f64>>,
    reference: &[Vec<f64>],
    grid: &GridSpec,
) -> Result<FieldGrid> {
    if grid.resolution_x == 0 || grid.resolution_y == 0 {
        return Err(Error::invalid("grid resolution must be positive"));
    }
    let (mean, basis) = principal_plane(reference)?;
    let bounds = match grid.bounds {
        Some(b) => b,
        None => {
            let proj: Vec<(f64, f64)> = reference
                .iter()
                .map(|s| {
                    let c: Vec<f64> = s.iter().zip(&mean).map(|(a, b)| a - b).collect();
                    (dot(&c, &basis[0]), dot(&c, &basis[1]))
                })
                .collect();
            let span = |f: &dyn Fn(&(f64, f64)) -> f64| {
                let lo = proj.iter().map(f).fold(f64::INFINITY, f64::min);
                let hi = proj.iter().map(f).fold(f64::NEG_INFINITY, f64::max);
                let margin = ((hi - lo) * 0.1).max(1e-6);
                (lo - margin, hi + margin)
            };
            let (x0, x1) = span(&|p| p.0);
            let (y0, y1) = span(&|p| p.1);
            [x0, x1, y0, y1]
        }
    };
    let coord = |lo: f64, hi: f64, n: usize, i: usize| {
        if n == 1 {
            0.5 * (lo + hi)
        } else {
            lo + (hi - lo) * i as f64 / (n - 1) as f64
        }
    };
    let mut arrows = Vec::with_capacity(grid.resolution_x * grid.resolution_y);
    for iy in 0..grid.resolution_y {
        let y = coord(bounds[2], bounds[3], grid.resolution_y, iy);
        for ix in 0..grid.resolution_x {
            let x = coord(bounds[0], bounds[1], grid.resolution_x, ix);
            let z: Vec<f64> = (0..mean.len())
                .map(|k| mean[k] + x * basis[0][k] + y * basis[1][k])
                .collect();
            let f = field(&z)?;
            if f.len() != z.len() {
                return Err(Error::invalid("field output width differs from the state width"));
            }
            let (dx, dy) = (dot(&f, &basis[0]), dot(&f, &basis[1]));
            if !(x.is_finite() && y.is_finite() && dx.is_finite() && dy.is_finite()) {
                return Err(Error::NonFinite(format!("field grid at ({x}, {y})")));
            }
            arrows.push(Arrow { x, y, dx, dy });
        }
    }
    Ok(FieldGrid { mean, basis, arrows })
}

/// Rounds to 9 significant digits and prints as a plain decimal.
pub fn format_sig9(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return if v == 0.0 { "0".to_string() } else { v.to_string() };
    }
    let rounded: f64 = format!("{v:.8e}").parse().expect("formatted float parses");
    format!("{rounded}")
}

impl FieldGrid {
    /// CSV with header `x,y,dx,dy`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("x,y,dx,dy\n");
        for a in &self.arrows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                format_sig9(a.x),
                format_sig9(a.y),
                format_sig9(a.dx),
                format_sig9(a.dy)
            ));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{gradcheck, BoundParams};
    use proptest::prelude::*;

    fn identity_field(_: &mut Tape, z: Var) -> Result<Var> {
        Ok(z)
    }

    fn solve_growth(dt_substeps: usize) -> f64 {
        let mut tape = Tape::new();
        let z0 = tape.constant(Tensor::scalar(1.0));
        let traj = solve_trajectory(&mut tape, &identity_field, z0, 1, dt_substeps).unwrap();
        tape.item(traj.states[0])
    }

    #[test]
    fn rk4_single_unit_step_matches_hand_expansion() {
        // k1 = 1, k2 = 1.5, k3 = 1.75, k4 = 2.75
        let z = solve_growth(1);
        assert_eq!(z, 1.0 + (1.0 + 3.0 + 3.5 + 2.75) / 6.0);
        assert!((z - 65.0 / 24.0).abs() < 1e-15);
    }

    #[test]
    fn rk4_convergence_order_is_four() {
        let pts: Vec<(f64, f64)> = [10usize, 20, 40]
            .iter()
            .map(|&n| ((1.0 / n as f64).ln(), (solve_growth(n) - 1f64.exp()).abs().ln()))
            .collect();
        let mx = pts.iter().map(|p| p.0).sum::<f64>() / 3.0;
        let my = pts.iter().map(|p| p.1).sum::<f64>() / 3.0;
        let slope = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum::<f64>()
            / pts.iter().map(|p| (p.0 - mx).powi(2)).sum::<f64>();
        assert!((slope - 4.0).abs() <= 0.2, "order {slope}");
    }

    #[test]
    fn nfe_counts_four_per_step() {
        for (k, s) in [(1, 1), (3, 2), (2, 4)] {
            let mut tape = Tape::new();
            let z0 = tape.constant(Tensor::row(vec![0.3, -0.1]));
            let traj = solve_trajectory(&mut tape, &identity_field, z0, k, s).unwrap();
            assert_eq!(traj.nfe, 4 * k * s);
            assert_eq!(traj.states.len(), k);
            assert_eq!(traj.times, (1..=k).map(|t| t as f64).collect::<Vec<_>>());
        }
    }

    #[test]
    fn zero_horizon_is_rejected() {
        let mut tape = Tape::new();
        let z0 = tape.constant(Tensor::scalar(1.0));
        assert!(solve_trajectory(&mut tape, &identity_field, z0, 0, 1).is_err());
        assert!(solve_trajectory(&mut tape, &identity_field, z0, 1, 0).is_err());
    }

    #[test]
    fn blow_up_names_stage_and_interval() {
        let mut tape = Tape::new();
        let z0 = tape.constant(Tensor::scalar(1e300));
        let field = |t: &mut Tape, z: Var| -> Result<Var> { t.mul(z, z) };
        match solve_trajectory(&mut tape, &field, z0, 2, 1) {
            Err(Error::NonFinite(msg)) => assert!(msg.contains("stage k1") && msg.contains("interval 0"), "{msg}"),
            other => panic!("unexpected {other:?}"),
        }
    }

    fn field_config(dim: usize, c: usize, gate: GateMode, freeze: bool) -> FieldConfig {
        FieldConfig {
            dim,
            stoch_dim: c,
            decay_hidden: 3,
            gate,
            freeze_stochastic: freeze,
        }
    }

    fn eval_once(store: &ParamStore, fp: &VectorFieldParams, z: &[f64]) -> (Vec<f64>, f64) {
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, |_| false);
        let c = fp.config.stoch_dim;
        let zs = tape.constant(Tensor::row(z[..c].to_vec()));
        let zv = tape.constant(Tensor::row(z.to_vec()));
        let field = fp.bind(&mut tape, &p, zs, None).unwrap();
        let f = field.eval(&mut tape, zv).unwrap();
        (tape.value(f).data().to_vec(), tape.item(field.lambda))
    }

    #[test]
    fn zero_initialized_field_is_linear() {
        let mut store = ParamStore::new();
        let fp = VectorFieldParams::register(&mut store, field_config(5, 2, GateMode::Learned, false), &mut Initializer::zeros())
            .unwrap();
        let z = [0.4, -1.2, 3.0, 0.01, -7.5];
        let (f, lambda) = eval_once(&store, &fp, &z);
        assert!((lambda - std::f64::consts::LN_2).abs() < 1e-15);
        for (fi, zi) in f.iter().zip(&z) {
            assert!((fi - 0.806853 * zi).abs() <= 1e-6 * zi.abs().max(1.0));
            assert!((fi - (1.5 - std::f64::consts::LN_2) * zi).abs() <= 1e-9);
        }
    }

    #[test]
    fn frozen_block_has_zero_derivative() {
        let mut store = ParamStore::new();
        let fp = VectorFieldParams::register(&mut store, field_config(6, 2, GateMode::Learned, true), &mut Initializer::seeded(3))
            .unwrap();
        let (f, _) = eval_once(&store, &fp, &[1.0, 2.0, 0.5, -0.5, 0.25, 1.5]);
        assert_eq!(&f[..2], &[0.0, 0.0]);
        assert!(f[2..].iter().any(|v| *v != 0.0));
    }

    #[test]
    fn random_gate_shape_is_checked() {
        let mut store = ParamStore::new();
        let fp = VectorFieldParams::register(&mut store, field_config(4, 1, GateMode::Random, false), &mut Initializer::seeded(1))
            .unwrap();
        let mut tape = Tape::new();
        let p = store.bind(&mut tape, |_| false);
        let zs = tape.constant(Tensor::row(vec![0.0]));
        assert!(fp.bind(&mut tape, &p, zs, Some(Tensor::zeros(1, 3))).is_err());
    }

    #[test]
    fn disabled_gate_drops_gate_term() {
        let mut store = ParamStore::new();
        let fp = VectorFieldParams::register(&mut store, field_config(3, 1, GateMode::Disabled, false), &mut Initializer::zeros())
            .unwrap();
        let (f, _) = eval_once(&store, &fp, &[1.0, 2.0, -1.0]);
        let k = 1.0 - std::f64::consts::LN_2;
        for (fi, zi) in f.iter().zip([1.0, 2.0, -1.0]) {
            assert!((fi - k * zi).abs() < 1e-12);
        }
    }

    #[test]
    fn unrolled_solver_gradients_match_finite_differences() {
        for seed in 0..20u64 {
            let mut store = ParamStore::new();
            let fp = VectorFieldParams::register(
                &mut store,
                field_config(4, 1, GateMode::Learned, true),
                &mut Initializer::seeded(seed),
            )
            .unwrap();
            let mut params = store.tensors().to_vec();
            params.push(Tensor::from_fn(1, 4, |_, j| 0.3 * j as f64 - 0.4 + 0.01 * seed as f64));
            let report = gradcheck(
                |tape, v| {
                    let p = BoundParams::from_vars(v[..v.len() - 1].to_vec());
                    let z0 = v[v.len() - 1];
                    let zs = tape.slice_cols(z0, 0, 1)?;
                    let field = fp.bind(tape, &p, zs, None)?;
                    let traj = solve_trajectory(tape, &field, z0, 2, 2)?;
                    let a = tape.sum(traj.states[0]);
                    let b = tape.l2_norm(traj.states[1]);
                    tape.add(a, b)
                },
                &params,
                1e-6,
                1e-5,
            )
            .unwrap();
            assert!(report.passed, "seed {seed}: {:?}", report.max_rel_error);
        }
    }

    #[test]
    fn field_grid_of_zero_field_is_zero() {
        let reference: Vec<Vec<f64>> = (0..6).map(|i| vec![i as f64, (i * i) as f64 * 0.1, 1.0]).collect();
        let zero = |z: &[f64]| -> Result<Vec<f64>> { Ok(vec![0.0; z.len()]) };
        let g = export_field_grid(&zero, &reference, &GridSpec::default()).unwrap();
        assert_eq!(g.arrows.len(), 400);
        let csv = g.to_csv();
        assert!(csv.starts_with("x,y,dx,dy\n"));
        assert!(csv.lines().skip(1).all(|l| l.ends_with(",0,0")));
    }

    #[test]
    fn field_grid_projects_linear_field() {
        let reference: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64, -(i as f64) * 0.5, ((i % 3) as f64) * 0.2]).collect();
        let neg = |z: &[f64]| -> Result<Vec<f64>> { Ok(z.iter().map(|v| -v).collect()) };
        let grid = GridSpec {
            resolution_x: 3,
            resolution_y: 2,
            bounds: Some([-1.0, 1.0, -0.5, 0.5]),
        };
        let g = export_field_grid(&neg, &reference, &grid).unwrap();
        assert_eq!(g.arrows.len(), 6);
        assert_eq!((g.arrows[0].x, g.arrows[0].y), (-1.0, -0.5));
        let m2: f64 = g.mean.iter().map(|m| m * m).sum();
        for a in &g.arrows {
            // f(z) = −z and the basis is orthonormal, so the projection is −(mean·u + coords).
            let mu0: f64 = g.mean.iter().zip(&g.basis[0]).map(|(m, u)| m * u).sum();
            let mu1: f64 = g.mean.iter().zip(&g.basis[1]).map(|(m, u)| m * u).sum();
            assert!((a.dx + a.x + mu0).abs() < 1e-9);
            assert!((a.dy + a.y + mu1).abs() < 1e-9);
        }
        assert!(m2 > 0.0);
    }

    #[test]
    fn field_grid_needs_three_states() {
        let zero = |z: &[f64]| -> Result<Vec<f64>> { Ok(vec![0.0; z.len()]) };
        assert!(export_field_grid(&zero, &[vec![0.0, 1.0], vec![1.0, 0.0]], &GridSpec::default()).is_err());
    }

    #[test]
    fn sig9_formatting() {
        assert_eq!(format_sig9(0.0), "0");
        assert_eq!(format_sig9(-0.0), "0");
        assert_eq!(format_sig9(1.5), "1.5");
        assert_eq!(format_sig9(1.0 / 3.0), "0.333333333");
        assert_eq!(format_sig9(123456789012.0), "123456789000");
    }

    fn random_field(seed: u64, gate: GateMode, zero_bias: bool) -> (ParamStore, VectorFieldParams) {
        let mut store = ParamStore::new();
        let fp = VectorFieldParams::register(&mut store, field_config(5, 2, gate, false), &mut Initializer::seeded(seed)).unwrap();
        if zero_bias {
            for id in [fp.res_b1, fp.res_b2] {
                store.get_mut(id).data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        // Stretch weights well beyond the init range.
        for t in store.tensors_mut() {
            t.data_mut().iter_mut().for_each(|v| *v *= 4.0);
        }
        (store, fp)
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn gate_is_open_interval(seed in any::<u64>(), z in prop::collection::vec(-20.0f64..20.0, 5)) {
            let (store, fp) = random_field(seed, GateMode::Learned, false);
            let mut tape = Tape::new();
            let p = store.bind(&mut tape, |_| false);
            let zv = tape.constant(Tensor::row(z));
            let g = gate(&mut tape, zv, p.var(fp.gate_w), p.var(fp.gate_b)).unwrap();
            prop_assert!(tape.value(g).data().iter().all(|v| *v > 0.0 && *v < 1.0));
        }

        #[test]
        fn decay_is_positive(seed in any::<u64>(), zs in prop::collection::vec(-50.0f64..50.0, 2)) {
            let (store, fp) = random_field(seed, GateMode::Learned, false);
            let mut z = zs.clone();
            z.extend([0.0, 0.0, 0.0]);
            let (_, lambda) = eval_once(&store, &fp, &z);
            prop_assert!(lambda > 0.0);
        }

        #[test]
        fn origin_is_preserved_exactly(seed in any::<u64>(), substeps in 1usize..4, horizon in 1usize..4) {
            let (store, fp) = random_field(seed, GateMode::Learned, true);
            let mut tape = Tape::new();
            let p = store.bind(&mut tape, |_| false);
            let zs = tape.constant(Tensor::zeros(1, 2));
            let z0 = tape.constant(Tensor::zeros(1, 5));
            let field = fp.bind(&mut tape, &p, zs, None).unwrap();
            let traj = solve_trajectory(&mut tape, &field, z0, horizon, substeps).unwrap().values(&tape);
            for s in &traj.states {
                prop_assert!(s.iter().all(|v| *v == 0.0));
            }
        }

        #[test]
        fn zero_init_closed_form(z in prop::collection::vec(-100.0f64..100.0, 5)) {
            let mut store = ParamStore::new();
            let fp = VectorFieldParams::register(&mut store, field_config(5, 2, GateMode::Learned, false), &mut Initializer::zeros()).unwrap();
            let (f, _) = eval_once(&store, &fp, &z);
            for (fi, zi) in f.iter().zip(&z) {
                prop_assert!((fi - (1.5 - std::f64::consts::LN_2) * zi).abs() <= 1e-9 * zi.abs().max(1.0));
            }
        }
    }
}
