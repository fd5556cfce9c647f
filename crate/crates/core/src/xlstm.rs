//! Scalar-memory xLSTM (sLSTM) cell with exponential input gating and a
//! normalizer state.
//!
//! ```text
//! z_t = tanh(w_zᵀx_t + r_z h_{t-1} + b_z)
//! i_t = exp(w_iᵀx_t + r_i h_{t-1} + b_i)
//! f_t = σ(·) or exp(·)
//! o_t = σ(w_oᵀx_t + r_o h_{t-1} + b_o)
//! c_t = f_t c_{t-1} + i_t z_t
//! n_t = f_t n_{t-1} + i_t
//! h_t = o_t c_t / n_t
//! ```
//!
//! The exponential gates are evaluated in log space against a running
//! stabilizer `m_t = max(log f_t + m_{t-1}, log i_t)`; the stored `c` and `n`
//! are both scaled by `exp(-m_t)`, which leaves `h_t` unchanged. On the first
//! step from the zero state the forget term vanishes and `m_1 = log i_1`.
//!
//! Because `h` is invariant to any choice of the stabilizer sequence, the
//! backward pass treats `m` as a constant and the gradients stay exact.

use crate::error::{Error, Result};
use crate::numerics::{
    axpy, log_sigmoid, mat_vec_acc, outer_acc, sigmoid, uniform_init, vec_mat_acc, RngStream,
    Tensor,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum ForgetMode {
    #[default]
    Sigmoid,
    Exponential,
}

impl ForgetMode {
    pub fn as_str(self) -> &'static str {
        match self {
            ForgetMode::Sigmoid => "sigmoid",
            ForgetMode::Exponential => "exponential",
        }
    }
}

impl std::str::FromStr for ForgetMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sigmoid" | "sig" => Ok(ForgetMode::Sigmoid),
            "exponential" | "exp" => Ok(ForgetMode::Exponential),
            other => Err(Error::invalid(format!("unknown forget mode `{other}`"))),
        }
    }
}

/// Input weights, recurrent weights and bias of one gate.
#[derive(Clone, Debug, PartialEq)]
pub struct GateParams {
    /// `input_dim × hidden`
    pub w: Tensor,
    /// `hidden × hidden`
    pub r: Tensor,
    /// `hidden`
    pub b: Tensor,
}

impl GateParams {
    fn zeros(input: usize, hidden: usize) -> Self {
        GateParams {
            w: Tensor::zeros(&[input, hidden]),
            r: Tensor::zeros(&[hidden, hidden]),
            b: Tensor::zeros(&[hidden]),
        }
    }

    fn random(rng: &mut RngStream, input: usize, hidden: usize) -> Result<Self> {
        let wb = 1.0 / (input as f64).sqrt();
        let rb = 1.0 / (hidden as f64).sqrt();
        Ok(GateParams {
            w: uniform_init(rng, &[input, hidden], -wb, wb)?,
            r: uniform_init(rng, &[hidden, hidden], -rb, rb)?,
            b: Tensor::zeros(&[hidden]),
        })
    }

    /// `xᵀw + hᵀr + b`
    fn preact(&self, x: &[f64], h: &[f64], out: &mut [f64]) {
        let hidden = out.len();
        out.copy_from_slice(self.b.data());
        vec_mat_acc(x, self.w.data(), hidden, out);
        vec_mat_acc(h, self.r.data(), hidden, out);
    }

    fn accumulate(&mut self, x: &[f64], h_prev: &[f64], d: &[f64]) {
        outer_acc(x, d, self.w.data_mut());
        outer_acc(h_prev, d, self.r.data_mut());
        axpy(self.b.data_mut(), 1.0, d);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SLstmParams {
    pub z: GateParams,
    pub i: GateParams,
    pub f: GateParams,
    pub o: GateParams,
    pub forget_mode: ForgetMode,
}

pub const GATE_NAMES: [&str; 4] = ["z", "i", "f", "o"];

impl SLstmParams {
    pub fn zeros(input: usize, hidden: usize, forget_mode: ForgetMode) -> Self {
        SLstmParams {
            z: GateParams::zeros(input, hidden),
            i: GateParams::zeros(input, hidden),
            f: GateParams::zeros(input, hidden),
            o: GateParams::zeros(input, hidden),
            forget_mode,
        }
    }

    pub fn random(rng: &mut RngStream, input: usize, hidden: usize, forget_mode: ForgetMode) -> Result<Self> {
        Ok(SLstmParams {
            z: GateParams::random(rng, input, hidden)?,
            i: GateParams::random(rng, input, hidden)?,
            f: GateParams::random(rng, input, hidden)?,
            o: GateParams::random(rng, input, hidden)?,
            forget_mode,
        })
    }

    /// Same shapes and mode, all zeros; used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        Self::zeros(self.input_dim(), self.hidden(), self.forget_mode)
    }

    pub fn input_dim(&self) -> usize {
        self.z.w.rows()
    }

    pub fn hidden(&self) -> usize {
        self.z.b.len()
    }

    fn gates(&self) -> [&GateParams; 4] {
        [&self.z, &self.i, &self.f, &self.o]
    }

    fn gates_mut(&mut self) -> [&mut GateParams; 4] {
        [&mut self.z, &mut self.i, &mut self.f, &mut self.o]
    }

    /// The twelve parameter tensors in canonical order (`w_z, r_z, b_z, w_i, …`).
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(12);
        for (name, g) in GATE_NAMES.iter().zip(self.gates()) {
            out.push((format!("w_{name}"), &g.w));
            out.push((format!("r_{name}"), &g.r));
            out.push((format!("b_{name}"), &g.b));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = Vec::with_capacity(12);
        for (name, g) in GATE_NAMES.iter().zip(self.gates_mut()) {
            out.push((format!("w_{name}"), &mut g.w));
            out.push((format!("r_{name}"), &mut g.r));
            out.push((format!("b_{name}"), &mut g.b));
        }
        out
    }

    fn check_input(&self, width: usize) -> Result<()> {
        if width != self.input_dim() {
            return Err(Error::Shape {
                op: "slstm input",
                left: vec![width],
                right: vec![self.input_dim()],
            });
        }
        Ok(())
    }
}

/// Recurrent state. `c` and `n` are stored scaled by `exp(-m)`.
#[derive(Clone, Debug, PartialEq)]
pub struct SLstmState {
    pub c: Tensor,
    pub n: Tensor,
    pub h: Tensor,
    pub m: Tensor,
}

impl SLstmState {
    pub fn zeros(hidden: usize) -> Self {
        SLstmState {
            c: Tensor::zeros(&[hidden]),
            n: Tensor::zeros(&[hidden]),
            h: Tensor::zeros(&[hidden]),
            m: Tensor::zeros(&[hidden]),
        }
    }

    /// True while no input has been consumed (`n ≡ 0`).
    pub fn is_initial(&self) -> bool {
        self.n.data().iter().all(|&v| v == 0.0)
    }
}

/// Gate pre-activations `[z̃, ĩ, f̃, õ]` for input `x` and previous hidden `h`.
pub fn gate_preactivations(params: &SLstmParams, h_prev: &[f64], x: &[f64]) -> [Vec<f64>; 4] {
    let hd = params.hidden();
    let mut out: [Vec<f64>; 4] = Default::default();
    for (slot, g) in out.iter_mut().zip(params.gates()) {
        *slot = vec![0.0; hd];
        g.preact(x, h_prev, slot);
    }
    out
}

fn log_forget(mode: ForgetMode, pre: f64) -> f64 {
    match mode {
        ForgetMode::Sigmoid => log_sigmoid(pre),
        ForgetMode::Exponential => pre,
    }
}

/// Per-step quantities kept for the backward pass.
#[derive(Clone, Debug)]
struct StepCache {
    valid: bool,
    fresh: bool,
    h_prev: Vec<f64>,
    c_prev: Vec<f64>,
    n_prev: Vec<f64>,
    z: Vec<f64>,
    i: Vec<f64>,
    f: Vec<f64>,
    o: Vec<f64>,
    /// `∂ log f / ∂ f̃`
    dlogf: Vec<f64>,
    c: Vec<f64>,
    n: Vec<f64>,
}

/// Stabilized step; returns the new state and the cache for backward.
fn step_cached(params: &SLstmParams, state: &SLstmState, x: &[f64]) -> (SLstmState, StepCache) {
    let hd = params.hidden();
    let fresh = state.is_initial();
    let [pz, pi, pf, po] = gate_preactivations(params, state.h.data(), x);
    let (c_prev, n_prev, m_prev) = (state.c.data(), state.n.data(), state.m.data());
    let mut cache = StepCache {
        valid: true,
        fresh,
        h_prev: state.h.data().to_vec(),
        c_prev: c_prev.to_vec(),
        n_prev: n_prev.to_vec(),
        z: vec![0.0; hd],
        i: vec![0.0; hd],
        f: vec![0.0; hd],
        o: vec![0.0; hd],
        dlogf: vec![0.0; hd],
        c: vec![0.0; hd],
        n: vec![0.0; hd],
    };
    let mut h = vec![0.0; hd];
    let mut m = vec![0.0; hd];
    for j in 0..hd {
        let z = pz[j].tanh();
        let o = sigmoid(po[j]);
        let logf = log_forget(params.forget_mode, pf[j]);
        let (mj, ig, fg, c, n) = if fresh {
            (pi[j], 1.0, 0.0, z, 1.0)
        } else {
            let mj = (logf + m_prev[j]).max(pi[j]);
            let ig = (pi[j] - mj).exp();
            let fg = (logf + m_prev[j] - mj).exp();
            (mj, ig, fg, fg * c_prev[j] + ig * z, fg * n_prev[j] + ig)
        };
        m[j] = mj;
        h[j] = o * (c / n);
        cache.z[j] = z;
        cache.i[j] = ig;
        cache.f[j] = fg;
        cache.o[j] = o;
        cache.dlogf[j] = match params.forget_mode {
            ForgetMode::Sigmoid => 1.0 - sigmoid(pf[j]),
            ForgetMode::Exponential => 1.0,
        };
        cache.c[j] = c;
        cache.n[j] = n;
    }
    let next = SLstmState {
        c: Tensor::from_vec(cache.c.clone()),
        n: Tensor::from_vec(cache.n.clone()),
        h: Tensor::from_vec(h),
        m: Tensor::from_vec(m),
    };
    (next, cache)
}

/// One stabilized recurrence step.
pub fn slstm_step(params: &SLstmParams, state: &SLstmState, x: &Tensor) -> Result<SLstmState> {
    params.check_input(x.len())?;
    Ok(step_cached(params, state, x.data()).0)
}

/// Unstabilized reference step with raw `exp` gates. The returned state keeps
/// `m = 0`, so `c` and `n` are unscaled. Overflows for large pre-activations.
pub fn slstm_step_naive(params: &SLstmParams, state: &SLstmState, x: &Tensor) -> Result<SLstmState> {
    params.check_input(x.len())?;
    let hd = params.hidden();
    let [pz, pi, pf, po] = gate_preactivations(params, state.h.data(), x.data());
    let mut next = SLstmState::zeros(hd);
    for j in 0..hd {
        let z = pz[j].tanh();
        let i = pi[j].exp();
        let f = match params.forget_mode {
            ForgetMode::Sigmoid => sigmoid(pf[j]),
            ForgetMode::Exponential => pf[j].exp(),
        };
        let o = sigmoid(po[j]);
        let c = f * state.c.data()[j] + i * z;
        let n = f * state.n.data()[j] + i;
        next.c.data_mut()[j] = c;
        next.n.data_mut()[j] = n;
        next.h.data_mut()[j] = o * c / n;
    }
    Ok(next)
}

/// Hidden states of a full sequence plus the cache needed by [`slstm_backward`].
#[derive(Clone, Debug)]
pub struct SLstmTrace {
    /// `n × hidden`; PAD rows repeat the carried hidden state.
    pub h: Tensor,
    pub final_state: SLstmState,
    steps: Vec<StepCache>,
}

/// Unrolls the cell from the zero state. Steps where `mask[t]` is false are
/// PAD: the state is carried through unchanged.
pub fn slstm_forward(params: &SLstmParams, x: &Tensor, mask: &[bool]) -> Result<SLstmTrace> {
    if x.rank() != 2 || x.rows() == 0 {
        return Err(Error::invalid(format!("slstm_forward needs a nonempty n×d input, got {:?}", x.shape())));
    }
    params.check_input(x.cols())?;
    if mask.len() != x.rows() {
        return Err(Error::Shape {
            op: "slstm_forward mask",
            left: vec![x.rows()],
            right: vec![mask.len()],
        });
    }
    let hd = params.hidden();
    let mut state = SLstmState::zeros(hd);
    let mut h = Vec::with_capacity(x.rows() * hd);
    let mut steps = Vec::with_capacity(x.rows());
    for (t, &valid) in mask.iter().enumerate() {
        if valid {
            let (next, cache) = step_cached(params, &state, x.row(t));
            state = next;
            steps.push(cache);
        } else {
            steps.push(StepCache {
                valid: false,
                fresh: false,
                h_prev: Vec::new(),
                c_prev: Vec::new(),
                n_prev: Vec::new(),
                z: Vec::new(),
                i: Vec::new(),
                f: Vec::new(),
                o: Vec::new(),
                dlogf: Vec::new(),
                c: Vec::new(),
                n: Vec::new(),
            });
        }
        h.extend_from_slice(state.h.data());
    }
    Ok(SLstmTrace {
        h: Tensor::new(vec![x.rows(), hd], h)?,
        final_state: state,
        steps,
    })
}

/// Reverse pass through the unrolled sequence. `dh` is `∂L/∂H` (`n × hidden`);
/// parameter gradients are accumulated into `grads` when given. Returns `∂L/∂X`.
pub fn slstm_backward(
    params: &SLstmParams,
    x: &Tensor,
    trace: &SLstmTrace,
    dh: &Tensor,
    mut grads: Option<&mut SLstmParams>,
) -> Result<Tensor> {
    if dh.shape() != trace.h.shape() {
        return Err(Error::Shape {
            op: "slstm_backward",
            left: dh.shape().to_vec(),
            right: trace.h.shape().to_vec(),
        });
    }
    let hd = params.hidden();
    let din = params.input_dim();
    let mut dx = Tensor::zeros(&[x.rows(), din]);
    let mut dh_rec = vec![0.0; hd];
    let mut dc_rec = vec![0.0; hd];
    let mut dn_rec = vec![0.0; hd];
    let mut dpre: [Vec<f64>; 4] = [vec![0.0; hd], vec![0.0; hd], vec![0.0; hd], vec![0.0; hd]];
    let gates = params.gates();

    for t in (0..trace.steps.len()).rev() {
        let s = &trace.steps[t];
        if !s.valid {
            axpy(&mut dh_rec, 1.0, dh.row(t));
            continue;
        }
        let dht = dh.row(t);
        for j in 0..hd {
            let dhj = dht[j] + dh_rec[j];
            let n = s.n[j];
            let ratio = s.c[j] / n;
            let d_o = dhj * ratio;
            let dratio = dhj * s.o[j];
            let dc = dc_rec[j] + dratio / n;
            let dn = dn_rec[j] - dratio * ratio / n;

            dpre[3][j] = d_o * s.o[j] * (1.0 - s.o[j]);
            dpre[0][j] = dc * s.i[j] * (1.0 - s.z[j] * s.z[j]);
            dpre[1][j] = (dc * s.z[j] + dn) * s.i[j];
            if s.fresh {
                dpre[2][j] = 0.0;
                dc_rec[j] = 0.0;
                dn_rec[j] = 0.0;
            } else {
                let df = dc * s.c_prev[j] + dn * s.n_prev[j];
                dpre[2][j] = df * s.f[j] * s.dlogf[j];
                dc_rec[j] = dc * s.f[j];
                dn_rec[j] = dn * s.f[j];
            }
        }
        let xt = x.row(t);
        let dxt = dx.row_mut(t);
        dh_rec.iter_mut().for_each(|v| *v = 0.0);
        for (g, d) in gates.iter().zip(&dpre) {
            mat_vec_acc(g.w.data(), d, dxt);
            mat_vec_acc(g.r.data(), d, &mut dh_rec);
        }
        if let Some(gr) = grads.as_deref_mut() {
            for (g, d) in gr.gates_mut().into_iter().zip(&dpre) {
                g.accumulate(xt, &s.h_prev, d);
            }
        }
    }
    Ok(dx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::{compare_gradients, GradTolerance};
    use crate::numerics::{finite_diff, rng_stream};

    fn all_true(n: usize) -> Vec<bool> {
        vec![true; n]
    }

    #[test]
    fn zero_params_first_step() {
        let p = SLstmParams::zeros(3, 2, ForgetMode::Sigmoid);
        let s = slstm_step(&p, &SLstmState::zeros(2), &Tensor::from_vec(vec![0.3, -1.0, 2.0])).unwrap();
        assert_eq!(s.c.data(), &[0.0, 0.0]);
        assert_eq!(s.n.data(), &[1.0, 1.0]);
        assert_eq!(s.h.data(), &[0.0, 0.0]);
    }

    #[test]
    fn saturated_cell_input_recursion() {
        // z = 1, i = 1, f = 0.5, o = 0.5
        let mut p = SLstmParams::zeros(1, 1, ForgetMode::Sigmoid);
        p.z.b.data_mut()[0] = 40.0;
        let x = Tensor::from_vec(vec![0.0]);
        let s1 = slstm_step(&p, &SLstmState::zeros(1), &x).unwrap();
        assert_eq!((s1.c.data()[0], s1.n.data()[0], s1.h.data()[0]), (1.0, 1.0, 0.5));
        let s2 = slstm_step(&p, &s1, &x).unwrap();
        assert_eq!((s2.c.data()[0], s2.n.data()[0], s2.h.data()[0]), (1.5, 1.5, 0.5));
    }

    fn small_net(seed: u64, input: usize, hidden: usize, mode: ForgetMode, scale: f64) -> SLstmParams {
        let mut r = rng_stream(seed);
        let mut p = SLstmParams::random(&mut r, input, hidden, mode).unwrap();
        for (_, t) in p.tensors_mut() {
            *t = uniform_init(&mut r, t.shape(), -scale, scale).unwrap();
        }
        p
    }

    #[test]
    fn stabilized_matches_naive_in_safe_regime() {
        for (seed, mode) in [(1, ForgetMode::Sigmoid), (2, ForgetMode::Exponential), (3, ForgetMode::Sigmoid)] {
            let p = small_net(seed, 4, 5, mode, 0.4);
            let xs = uniform_init(&mut rng_stream(seed + 10), &[12, 4], -1.0, 1.0).unwrap();
            let (mut a, mut b) = (SLstmState::zeros(5), SLstmState::zeros(5));
            for t in 0..12 {
                let x = Tensor::from_vec(xs.row(t).to_vec());
                for pre in gate_preactivations(&p, b.h.data(), x.data()) {
                    assert!(pre.iter().all(|v| v.abs() <= 5.0));
                }
                a = slstm_step(&p, &a, &x).unwrap();
                b = slstm_step_naive(&p, &b, &x).unwrap();
                for (u, v) in a.h.data().iter().zip(b.h.data()) {
                    assert!((u - v).abs() <= 1e-10 * v.abs().max(1e-300), "{u} vs {v}");
                }
            }
        }
    }

    #[test]
    fn single_step_sequence_matches_step() {
        let p = small_net(4, 3, 4, ForgetMode::Sigmoid, 0.5);
        let x = uniform_init(&mut rng_stream(5), &[1, 3], -1.0, 1.0).unwrap();
        let tr = slstm_forward(&p, &x, &all_true(1)).unwrap();
        let s = slstm_step(&p, &SLstmState::zeros(4), &Tensor::from_vec(x.row(0).to_vec())).unwrap();
        assert_eq!(tr.h.row(0), s.h.data());
    }

    #[test]
    fn hidden_bounded_by_one() {
        let mut r = rng_stream(99);
        for k in 0..100 {
            let mode = if k % 2 == 0 { ForgetMode::Sigmoid } else { ForgetMode::Exponential };
            let p = small_net(1000 + k, 3, 4, mode, 1.5);
            let x = uniform_init(&mut r, &[20, 3], -2.0, 2.0).unwrap();
            let tr = slstm_forward(&p, &x, &all_true(20)).unwrap();
            assert!(tr.h.data().iter().all(|v| v.abs() <= 1.0));
        }
    }

    #[test]
    fn normalized_cell_is_weighted_average_of_inputs() {
        for seed in 0..10u64 {
            let mode = if seed % 2 == 0 { ForgetMode::Sigmoid } else { ForgetMode::Exponential };
            let p = small_net(seed, 2, 3, mode, 0.8);
            let len = 1 + (seed as usize % 8);
            let xs = uniform_init(&mut rng_stream(seed + 50), &[len, 2], -1.0, 1.0).unwrap();
            let mut state = SLstmState::zeros(3);
            let (mut zs, mut is, mut fs) = (vec![], vec![], vec![]);
            for t in 0..len {
                let x = Tensor::from_vec(xs.row(t).to_vec());
                let [pz, pi, pf, _] = gate_preactivations(&p, state.h.data(), x.data());
                zs.push(pz.iter().map(|v| v.tanh()).collect::<Vec<_>>());
                is.push(pi.iter().map(|v| v.exp()).collect::<Vec<_>>());
                fs.push(pf.iter().map(|&v| if mode == ForgetMode::Sigmoid { sigmoid(v) } else { v.exp() }).collect::<Vec<_>>());
                state = slstm_step(&p, &state, &x).unwrap();
                for j in 0..3 {
                    // ω_k ∝ i_k Π_{l>k} f_l
                    let raw: Vec<f64> = (0..=t)
                        .map(|k| is[k][j] * ((k + 1)..=t).map(|l| fs[l][j]).product::<f64>())
                        .collect();
                    let total: f64 = raw.iter().sum();
                    let avg: f64 = raw.iter().zip(&zs).map(|(w, z)| w / total * z[j]).sum();
                    let ratio = state.c.data()[j] / state.n.data()[j];
                    assert!((ratio - avg).abs() < 1e-12, "{ratio} vs {avg}");
                    let zmax = zs.iter().map(|z| z[j].abs()).fold(0.0, f64::max);
                    assert!(ratio.abs() <= zmax + 1e-15);
                }
            }
        }
    }

    #[test]
    fn exponential_forget_stress_stays_finite() {
        let mut p = SLstmParams::zeros(2, 3, ForgetMode::Exponential);
        for g in p.gates_mut() {
            g.b.fill(50.0);
        }
        let x = Tensor::zeros(&[100, 2]);
        let tr = slstm_forward(&p, &x, &all_true(100)).unwrap();
        assert!(tr.h.is_finite());
        assert!(tr.final_state.n.data().iter().all(|&v| v > 0.0 && v.is_finite()));
        assert!(tr.final_state.c.is_finite());
    }

    #[test]
    fn trailing_pad_carries_state() {
        let p = small_net(8, 3, 4, ForgetMode::Sigmoid, 0.5);
        let x = uniform_init(&mut rng_stream(9), &[5, 3], -1.0, 1.0).unwrap();
        let full = slstm_forward(&p, &x, &[true, true, true, false, false]).unwrap();
        assert_eq!(full.h.row(3), full.h.row(2));
        assert_eq!(full.h.row(4), full.h.row(2));
        let short = Tensor::new(vec![3, 3], x.data()[..9].to_vec()).unwrap();
        let tr = slstm_forward(&p, &short, &all_true(3)).unwrap();
        assert_eq!(tr.h.row(2), full.h.row(2));
    }

    fn sum_h(p: &SLstmParams, x: &Tensor, mask: &[bool]) -> f64 {
        slstm_forward(p, x, mask).unwrap().h.sum()
    }

    #[test]
    fn gradients_match_finite_differences() {
        for mode in [ForgetMode::Sigmoid, ForgetMode::Exponential] {
            let p = small_net(21, 3, 4, mode, 0.6);
            let x = uniform_init(&mut rng_stream(22), &[6, 3], -1.0, 1.0).unwrap();
            let mask = vec![true, true, false, true, true, true];
            let tr = slstm_forward(&p, &x, &mask).unwrap();
            let mut grads = p.zeros_like();
            let ones = Tensor::new(vec![6, 4], vec![1.0; 24]).unwrap();
            let dx = slstm_backward(&p, &x, &tr, &ones, Some(&mut grads)).unwrap();
            let tol = GradTolerance::default();

            let names: Vec<String> = p.tensors().into_iter().map(|(n, _)| n).collect();
            let analytic: Vec<Tensor> = grads.tensors().into_iter().map(|(_, t)| t.clone()).collect();
            for (k, name) in names.iter().enumerate() {
                let base = p.tensors()[k].1.clone();
                let numeric = finite_diff(
                    |t| {
                        let mut q = p.clone();
                        *q.tensors_mut()[k].1 = t.clone();
                        sum_h(&q, &x, &mask)
                    },
                    &base,
                    1e-5,
                )
                .unwrap();
                let rep = compare_gradients(name, &analytic[k], &numeric, tol);
                assert!(rep.passed, "{mode:?} {rep}");
            }
            let numeric = finite_diff(|xx| sum_h(&p, xx, &mask), &x, 1e-5).unwrap();
            let rep = compare_gradients("x", &dx, &numeric, tol);
            assert!(rep.passed, "{mode:?} {rep}");
            assert!(dx.row(2).iter().all(|&v| v == 0.0));
        }
    }
}
