//! Trainable primitives with hand-written backward rules, plus Adam.

use crate::error::{Error, Result};
use crate::numerics::{
    self, finite_diff, log_sum_exp, mat_vec_acc, outer_acc, softmax, uniform_init, vec_mat_acc,
    RngStream, Tensor,
};

/// Token id reserved for padding.
pub const PAD_ID: usize = 0;
/// Token id for out-of-vocabulary words.
pub const UNK_ID: usize = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub weights: Tensor,
}

impl EmbeddingTable {
    pub fn new(weights: Tensor) -> Result<Self> {
        if weights.rank() != 2 || weights.rows() < 2 {
            return Err(Error::invalid(format!(
                "embedding table needs at least the PAD and UNK rows, got shape {:?}",
                weights.shape()
            )));
        }
        Ok(EmbeddingTable { weights })
    }

    pub fn random(rng: &mut RngStream, vocab_size: usize, dim: usize, scale: f64) -> Result<Self> {
        Self::new(uniform_init(rng, &[vocab_size, dim], -scale, scale)?)
    }

    pub fn vocab_size(&self) -> usize {
        self.weights.rows()
    }

    pub fn dim(&self) -> usize {
        self.weights.cols()
    }

    /// Looks up one row per id.
    pub fn embed(&self, ids: &[usize]) -> Result<Tensor> {
        let dim = self.dim();
        let mut data = Vec::with_capacity(ids.len() * dim);
        for &id in ids {
            if id >= self.vocab_size() {
                return Err(Error::TokenOutOfRange {
                    id,
                    vocab_size: self.vocab_size(),
                });
            }
            data.extend_from_slice(self.weights.row(id));
        }
        Tensor::new(vec![ids.len(), dim], data)
    }

    /// Scatters row gradients back onto the table rows they were looked up from.
    pub fn accumulate_grad(grad_table: &mut Tensor, ids: &[usize], grad_rows: &Tensor) {
        for (t, &id) in ids.iter().enumerate() {
            numerics::axpy(grad_table.row_mut(id), 1.0, grad_rows.row(t));
        }
    }
}

/// `true` at every non-PAD position.
pub fn pad_mask(ids: &[usize]) -> Vec<bool> {
    ids.iter().map(|&id| id != PAD_ID).collect()
}

/// Affine map `y = x·W + b` with `W: in × out`.
#[derive(Clone, Debug, PartialEq)]
pub struct LinearParams {
    pub w: Tensor,
    pub b: Tensor,
}

impl LinearParams {
    pub fn new(w: Tensor, b: Tensor) -> Result<Self> {
        if w.rank() != 2 || b.rank() != 1 || w.cols() != b.len() {
            return Err(Error::Shape {
                op: "LinearParams::new",
                left: w.shape().to_vec(),
                right: b.shape().to_vec(),
            });
        }
        Ok(LinearParams { w, b })
    }

    pub fn zeros(input: usize, output: usize) -> Self {
        LinearParams {
            w: Tensor::zeros(&[input, output]),
            b: Tensor::zeros(&[output]),
        }
    }

    /// Weights drawn from `U(-1/√in, 1/√in)`, zero bias.
    pub fn random(rng: &mut RngStream, input: usize, output: usize) -> Result<Self> {
        let bound = 1.0 / (input as f64).sqrt();
        Ok(LinearParams {
            w: uniform_init(rng, &[input, output], -bound, bound)?,
            b: Tensor::zeros(&[output]),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.w.rows()
    }

    pub fn output_dim(&self) -> usize {
        self.w.cols()
    }

    /// Single-row forward on a slice.
    pub fn forward_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = self.b.data().to_vec();
        vec_mat_acc(x, self.w.data(), self.output_dim(), &mut y);
        y
    }

    /// Single-row backward: accumulates parameter gradients into `grads` and
    /// returns `∂/∂x`.
    pub fn backward_vec(&self, x: &[f64], dy: &[f64], grads: Option<&mut LinearParams>) -> Vec<f64> {
        if let Some(g) = grads {
            outer_acc(x, dy, g.w.data_mut());
            numerics::axpy(g.b.data_mut(), 1.0, dy);
        }
        let mut dx = vec![0.0; self.input_dim()];
        mat_vec_acc(self.w.data(), dy, &mut dx);
        dx
    }
}

/// Row-wise `x·W + b` for `x` of shape `[…, in]`.
pub fn linear(params: &LinearParams, x: &Tensor) -> Result<Tensor> {
    if x.cols() != params.input_dim() {
        return Err(Error::Shape {
            op: "linear",
            left: x.shape().to_vec(),
            right: params.w.shape().to_vec(),
        });
    }
    let rows = x.len() / params.input_dim().max(1);
    let mut data = Vec::with_capacity(rows * params.output_dim());
    for r in 0..rows {
        data.extend(params.forward_vec(x.row(r)));
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().expect("rank ≥ 1") = params.output_dim();
    Tensor::new(shape, data)
}

/// Backward of [`linear`]: returns `∂/∂x` and accumulates into `grads`.
pub fn linear_backward(
    params: &LinearParams,
    x: &Tensor,
    dy: &Tensor,
    grads: &mut LinearParams,
) -> Result<Tensor> {
    let rows = x.len() / params.input_dim().max(1);
    let mut dx = Vec::with_capacity(x.len());
    for r in 0..rows {
        dx.extend(params.backward_vec(x.row(r), dy.row(r), Some(grads)));
    }
    Tensor::new(x.shape().to_vec(), dx)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DropoutSpec {
    pub p: f64,
    pub mode: Mode,
}

impl DropoutSpec {
    /// Per-entry multipliers: `0` for dropped entries, `1/(1-p)` for kept ones.
    /// Eval mode (or `p == 0`) yields all ones and draws nothing from `rng`.
    pub fn mask(&self, len: usize, rng: &mut RngStream) -> Vec<f64> {
        if self.mode == Mode::Eval || self.p == 0.0 {
            return vec![1.0; len];
        }
        let keep = 1.0 / (1.0 - self.p);
        (0..len)
            .map(|_| if rng.bernoulli(self.p) { 0.0 } else { keep })
            .collect()
    }
}

/// Inverted dropout.
pub fn dropout(x: &Tensor, spec: DropoutSpec, rng: &mut RngStream) -> Result<Tensor> {
    if !(0.0..1.0).contains(&spec.p) {
        return Err(Error::invalid(format!("dropout probability {} not in [0, 1)", spec.p)));
    }
    if spec.mode == Mode::Eval || spec.p == 0.0 {
        return Ok(x.clone());
    }
    let mask = spec.mask(x.len(), rng);
    let data = x.data().iter().zip(&mask).map(|(v, m)| v * m).collect();
    Tensor::new(x.shape().to_vec(), data)
}

/// `-log softmax(logits)[label]`.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<f64> {
    if label >= logits.len() {
        return Err(Error::LabelOutOfRange {
            label,
            classes: logits.len(),
        });
    }
    Ok((log_sum_exp(logits) - logits[label]).max(0.0))
}

/// `softmax(logits) − onehot(label)`.
pub fn cross_entropy_grad(logits: &[f64], label: usize) -> Vec<f64> {
    let mut g = softmax(logits);
    g[label] -= 1.0;
    g
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

/// Moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Tensor,
    pub v: Tensor,
    pub t: u64,
    pub cfg: AdamConfig,
}

impl AdamState {
    pub fn new(shape: &[usize], cfg: AdamConfig) -> Self {
        AdamState {
            m: Tensor::zeros(shape),
            v: Tensor::zeros(shape),
            t: 0,
            cfg,
        }
    }

    /// One bias-corrected Adam update. Weight decay is L2-coupled: it is added
    /// to the gradient before the moment updates.
    pub fn step(&mut self, param: &mut Tensor, grad: &Tensor) -> Result<()> {
        if grad.shape() != param.shape() || self.m.shape() != param.shape() {
            return Err(Error::Shape {
                op: "adam_step",
                left: param.shape().to_vec(),
                right: grad.shape().to_vec(),
            });
        }
        if !grad.is_finite() {
            return Err(Error::NonFinite("gradient passed to adam_step".into()));
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
            weight_decay,
        } = self.cfg;
        self.t += 1;
        let bc1 = 1.0 - beta1.powi(self.t as i32);
        let bc2 = 1.0 - beta2.powi(self.t as i32);
        let p = param.data_mut();
        let m = self.m.data_mut();
        let v = self.v.data_mut();
        for (i, &g0) in grad.data().iter().enumerate() {
            let g = g0 + weight_decay * p[i];
            m[i] = beta1 * m[i] + (1.0 - beta1) * g;
            v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

/// Functional form of [`AdamState::step`].
pub fn adam_step(state: AdamState, param: Tensor, grad: &Tensor) -> Result<(AdamState, Tensor)> {
    let mut state = state;
    let mut param = param;
    state.step(&mut param, grad)?;
    Ok((state, param))
}

#[derive(Clone, Copy, Debug)]
pub struct GradTolerance {
    pub rel: f64,
    pub abs_floor: f64,
    pub step: f64,
}

impl Default for GradTolerance {
    fn default() -> Self {
        GradTolerance {
            rel: 1e-4,
            abs_floor: 1e-7,
            step: numerics::DEFAULT_FD_STEP,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub name: String,
    pub entries: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub passed: bool,
}

impl std::fmt::Display for GradCheckReport {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "{:<28} n={:<6} max_rel={:.3e} max_abs={:.3e} {}",
            self.name,
            self.entries,
            self.max_rel_err,
            self.max_abs_err,
            if self.passed { "PASS" } else { "FAIL" }
        )
    }
}

/// Compares an analytic gradient against a numeric one. An entry passes when
/// its absolute error is under the floor or its relative error is under
/// `tol.rel`; `max_rel_err` only counts entries above the floor.
pub fn compare_gradients(name: &str, analytic: &Tensor, numeric: &Tensor, tol: GradTolerance) -> GradCheckReport {
    let mut max_rel: f64 = 0.0;
    let mut max_abs: f64 = 0.0;
    let mut passed = analytic.shape() == numeric.shape();
    for (a, n) in analytic.data().iter().zip(numeric.data()) {
        let abs = (a - n).abs();
        max_abs = max_abs.max(abs);
        if !abs.is_finite() {
            passed = false;
            continue;
        }
        if abs > tol.abs_floor {
            let rel = abs / a.abs().max(n.abs());
            max_rel = max_rel.max(rel);
            if rel >= tol.rel {
                passed = false;
            }
        }
    }
    GradCheckReport {
        name: name.to_string(),
        entries: analytic.len(),
        max_rel_err: max_rel,
        max_abs_err: max_abs,
        passed,
    }
}

/// Checks `analytic` against central differences of `f` around `x`.
/// Failures are reported, never returned as errors.
pub fn grad_check(
    name: &str,
    f: impl FnMut(&Tensor) -> f64,
    x: &Tensor,
    analytic: &Tensor,
    tol: GradTolerance,
) -> GradCheckReport {
    match finite_diff(f, x, tol.step) {
        Ok(numeric) => compare_gradients(name, analytic, &numeric, tol),
        Err(_) => GradCheckReport {
            name: name.to_string(),
            entries: x.len(),
            max_rel_err: f64::INFINITY,
            max_abs_err: f64::INFINITY,
            passed: false,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rng_stream;
    use proptest::prelude::*;

    fn basis_table(n: usize) -> EmbeddingTable {
        let mut w = Tensor::zeros(&[n, n]);
        for i in 0..n {
            w.row_mut(i)[i] = 1.0;
        }
        EmbeddingTable::new(w).unwrap()
    }

    #[test]
    fn embed_lookup() {
        let t = EmbeddingTable::random(&mut rng_stream(1), 5, 3, 0.5).unwrap();
        let x = t.embed(&[0, 0]).unwrap();
        assert_eq!(x.row(0), x.row(1));
        assert_eq!(x.row(0), t.weights.row(0));

        let t = basis_table(4);
        assert_eq!(t.embed(&[2]).unwrap().data(), &[0.0, 0.0, 1.0, 0.0]);
        assert!(matches!(t.embed(&[4]), Err(Error::TokenOutOfRange { id: 4, .. })));
    }

    #[test]
    fn embed_gradient_of_sum_hits_looked_up_rows() {
        let table = EmbeddingTable::random(&mut rng_stream(2), 6, 3, 0.5).unwrap();
        let ids = [2usize, 4, 2];
        let mut analytic = Tensor::zeros(table.weights.shape());
        let ones = Tensor::new(vec![3, 3], vec![1.0; 9]).unwrap();
        EmbeddingTable::accumulate_grad(&mut analytic, &ids, &ones);
        let numeric = finite_diff(
            |w| EmbeddingTable::new(w.clone()).unwrap().embed(&ids).unwrap().sum(),
            &table.weights,
            1e-5,
        )
        .unwrap();
        assert!(compare_gradients("embed", &analytic, &numeric, GradTolerance::default()).passed);
        assert_eq!(analytic.row(2), &[2.0, 2.0, 2.0]);
        assert_eq!(analytic.row(0), &[0.0, 0.0, 0.0]);
    }

    #[test]
    fn linear_identity_and_bias() {
        let mut p = LinearParams::zeros(3, 3);
        for i in 0..3 {
            p.w.row_mut(i)[i] = 1.0;
        }
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.0, 1.0]]).unwrap();
        assert_eq!(linear(&p, &x).unwrap(), x);

        let p = LinearParams::new(Tensor::zeros(&[2, 3]), Tensor::from_vec(vec![1.0, 2.0, 3.0])).unwrap();
        let y = linear(&p, &Tensor::zeros(&[4, 2])).unwrap();
        for r in 0..4 {
            assert_eq!(y.row(r), &[1.0, 2.0, 3.0]);
        }
        assert!(linear(&p, &Tensor::zeros(&[1, 3])).is_err());
    }

    /// Loss `Σ (x·W + b) ⊙ c` for a fixed random `c`.
    fn linear_case(seed: u64, rows: usize, inp: usize, out: usize) -> (LinearParams, Tensor, Tensor) {
        let mut r = rng_stream(seed);
        let p = LinearParams::new(
            uniform_init(&mut r, &[inp, out], -1.0, 1.0).unwrap(),
            uniform_init(&mut r, &[out], -1.0, 1.0).unwrap(),
        )
        .unwrap();
        let x = uniform_init(&mut r, &[rows, inp], -1.0, 1.0).unwrap();
        let c = uniform_init(&mut r, &[rows, out], -1.0, 1.0).unwrap();
        (p, x, c)
    }

    fn linear_reports(seed: u64, rows: usize, inp: usize, out: usize, flip: bool) -> Vec<GradCheckReport> {
        let (p, x, c) = linear_case(seed, rows, inp, out);
        let mut g = LinearParams::zeros(inp, out);
        let mut dx = linear_backward(&p, &x, &c, &mut g).unwrap();
        if flip {
            dx = dx.scale(-1.0);
        }
        let tol = GradTolerance::default();
        let loss = |p: &LinearParams, x: &Tensor| linear(p, x).unwrap().dot(&c).unwrap();
        vec![
            grad_check("linear.w", |w| loss(&LinearParams::new(w.clone(), p.b.clone()).unwrap(), &x), &p.w, &g.w, tol),
            grad_check("linear.b", |b| loss(&LinearParams::new(p.w.clone(), b.clone()).unwrap(), &x), &p.b, &g.b, tol),
            grad_check("linear.x", |xx| loss(&p, xx), &x, &dx, tol),
        ]
    }

    #[test]
    fn linear_grad_check_and_negative_control() {
        assert!(linear_reports(11, 4, 3, 2, false).iter().all(|r| r.passed));
        let flipped = linear_reports(11, 4, 3, 2, true);
        assert!(!flipped[2].passed, "sign-flipped backward must fail");
    }

    #[test]
    fn linear_grad_check_random_shapes() {
        let mut r = rng_stream(5);
        for i in 0..20 {
            let (rows, inp, out) = (1 + r.below(5), 1 + r.below(6), 1 + r.below(6));
            for rep in linear_reports(100 + i, rows, inp, out, false) {
                assert!(rep.passed, "{rep}");
            }
        }
    }

    #[test]
    fn dropout_modes() {
        let x = uniform_init(&mut rng_stream(3), &[7], -1.0, 1.0).unwrap();
        let mut r = rng_stream(4);
        assert_eq!(dropout(&x, DropoutSpec { p: 0.5, mode: Mode::Eval }, &mut r).unwrap(), x);
        assert_eq!(dropout(&x, DropoutSpec { p: 0.0, mode: Mode::Train }, &mut r).unwrap(), x);

        let ones = Tensor::from_vec(vec![1.0; 10_000]);
        let y = dropout(&ones, DropoutSpec { p: 0.5, mode: Mode::Train }, &mut rng_stream(8)).unwrap();
        let mean = y.sum() / 10_000.0;
        assert!((0.95..=1.05).contains(&mean), "mean {mean}");
        assert!(y.data().iter().all(|&v| v == 0.0 || v == 2.0));
    }

    #[test]
    fn dropout_preserves_expectation() {
        let mut r = rng_stream(21);
        let x = uniform_init(&mut r, &[100_000], 0.0, 2.0).unwrap();
        let y = dropout(&x, DropoutSpec { p: 0.3, mode: Mode::Train }, &mut r).unwrap();
        let (mx, my) = (x.sum(), y.sum());
        assert!(((my - mx) / mx).abs() < 0.05);
    }

    #[test]
    fn cross_entropy_cases() {
        assert!((cross_entropy(&[0.0, 0.0], 0).unwrap() - 2f64.ln()).abs() < 1e-15);
        assert!(cross_entropy(&[30.0, -30.0], 0).unwrap() < 1e-12);
        assert!(matches!(cross_entropy(&[0.0, 1.0], 2), Err(Error::LabelOutOfRange { .. })));

        let mut r = rng_stream(6);
        let logits = uniform_init(&mut r, &[5], -3.0, 3.0).unwrap();
        let analytic = Tensor::from_vec(cross_entropy_grad(logits.data(), 3));
        let rep = grad_check("ce", |l| cross_entropy(l.data(), 3).unwrap(), &logits, &analytic, GradTolerance::default());
        assert!(rep.passed, "{rep}");
    }

    #[test]
    fn adam_first_step_matches_hand_computation() {
        // m = 0.02, v = 4e-5, m̂ = 0.2, v̂ = 0.04 → Δ = lr · 0.2 / (0.2 + 1e-8)
        let state = AdamState::new(&[1], AdamConfig::default());
        let (state, p) = adam_step(state, Tensor::from_vec(vec![0.0]), &Tensor::from_vec(vec![0.2])).unwrap();
        let expected = -1e-3 * 0.2 / (0.2 + 1e-8);
        assert!((p.data()[0] - expected).abs() < 1e-15);
        assert!((p.data()[0] - -9.99999975e-4).abs() < 1e-10);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn adam_zero_gradient_and_determinism() {
        let mut r = rng_stream(2);
        let p0 = uniform_init(&mut r, &[4], -1.0, 1.0).unwrap();
        let mut s = AdamState::new(&[4], AdamConfig::default());
        let mut p = p0.clone();
        s.step(&mut p, &Tensor::zeros(&[4])).unwrap();
        assert_eq!(p, p0);
        assert_eq!(s.t, 1);

        let run = || {
            let mut r = rng_stream(77);
            let mut s = AdamState::new(&[4], AdamConfig { weight_decay: 1e-4, ..Default::default() });
            let mut p = p0.clone();
            let mut traj = Vec::new();
            for _ in 0..10 {
                let g = uniform_init(&mut r, &[4], -1.0, 1.0).unwrap();
                s.step(&mut p, &g).unwrap();
                traj.push(p.clone());
            }
            traj
        };
        assert_eq!(run(), run());

        let mut bad = Tensor::zeros(&[4]);
        bad.data_mut()[1] = f64::NAN;
        assert!(s.step(&mut p, &bad).is_err());
    }

    proptest! {
        #[test]
        fn ce_shift_invariant(v in prop::collection::vec(-10.0f64..10.0, 2..8), c in -50.0f64..50.0, label in 0usize..2) {
            let shifted: Vec<f64> = v.iter().map(|x| x + c).collect();
            let a = cross_entropy(&v, label).unwrap();
            let b = cross_entropy(&shifted, label).unwrap();
            prop_assert!((a - b).abs() < 1e-12);
            prop_assert!(a >= 0.0);
        }

        #[test]
        fn adam_zero_lr_is_identity(seed in 0u64..1000) {
            let mut r = rng_stream(seed);
            let p0 = uniform_init(&mut r, &[6], -1.0, 1.0).unwrap();
            let mut p = p0.clone();
            let mut s = AdamState::new(&[6], AdamConfig { lr: 0.0, weight_decay: 1e-4, ..Default::default() });
            for _ in 0..3 {
                let g = uniform_init(&mut r, &[6], -5.0, 5.0).unwrap();
                s.step(&mut p, &g).unwrap();
            }
            prop_assert_eq!(p, p0);
            prop_assert!(s.v.data().iter().all(|&v| v >= 0.0));
        }
    }
}
