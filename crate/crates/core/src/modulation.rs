//! Stage 2: per-domain input modulation `X' = X + λ·∇ₓL_d`.
//!
//! The network is frozen. For each domain a single signed step size λ is
//! first fitted with Adam on the training split (minimizing sentiment loss,
//! with the domain gradient `g` held constant), then adjusted on the
//! validation split by a grow/shrink/revert search ([`scale_lambda`]).

use crate::data::Example;
use crate::error::{Error, Result};
use crate::layers::{AdamConfig, AdamState, Mode};
use crate::net::{domain_input_grad, forward_embedded, sentiment_input_grad, DamNet};
use crate::numerics::{RngStream, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct ModulationConfig {
    /// λ is kept in `[-b, b]`.
    pub b: f64,
    /// Shrink divisor.
    pub alpha: f64,
    /// Growth multiplier.
    pub beta: f64,
    pub t_window: usize,
    /// Maximum number of validation evaluations during scaling.
    pub n_t: usize,
    pub adam: AdamConfig,
    pub epochs: usize,
    pub batch_size: usize,
}

impl Default for ModulationConfig {
    fn default() -> Self {
        ModulationConfig {
            b: 100.0,
            alpha: 2.0,
            beta: 1.5,
            t_window: 3,
            n_t: 10,
            adam: AdamConfig {
                lr: 10.0,
                ..AdamConfig::default()
            },
            epochs: 1,
            batch_size: 64,
        }
    }
}

impl ModulationConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if !(self.alpha > 1.0) || !(self.beta > 1.0) {
            return bad("alpha and beta must exceed 1");
        }
        if self.alpha == self.beta {
            return bad("alpha and beta must differ");
        }
        if !(self.b > 0.0) || !self.b.is_finite() {
            return bad("b must be positive and finite");
        }
        if self.t_window < 2 {
            return bad("t_window must be at least 2");
        }
        if self.n_t == 0 || self.batch_size == 0 {
            return bad("n_t and batch_size must be at least 1");
        }
        Ok(())
    }

    pub fn with_bound(&self, b: f64) -> Self {
        ModulationConfig { b, ..self.clone() }
    }
}

/// An example with its embeddings and frozen domain gradient cached.
#[derive(Clone, Debug)]
pub struct ModInput {
    pub x: Tensor,
    pub mask: Vec<bool>,
    /// `∇ₓL_d` at the unmodulated input; zero on PAD rows.
    pub g: Tensor,
    /// Unmodulated domain cross-entropy.
    pub domain_loss: f64,
    pub y_s: usize,
    pub y_d: usize,
}

pub fn prepare(net: &DamNet, examples: &[Example]) -> Result<Vec<ModInput>> {
    examples
        .iter()
        .map(|ex| {
            let x = net.embedding.embed(&ex.tokens)?;
            let mask = crate::layers::pad_mask(&ex.tokens);
            let dg = domain_input_grad(net, &x, &mask, ex.y_d)?;
            Ok(ModInput {
                x,
                mask,
                g: dg.grad,
                domain_loss: dg.loss,
                y_s: ex.y_s,
                y_d: ex.y_d,
            })
        })
        .collect()
}

/// `X + λ·g`. With `λ == 0` the input is returned unchanged.
pub fn modulate(x: &Tensor, g: &Tensor, lam: f64) -> Result<Tensor> {
    if x.shape() != g.shape() {
        return Err(Error::Shape {
            op: "modulate",
            left: x.shape().to_vec(),
            right: g.shape().to_vec(),
        });
    }
    let mut out = x.clone();
    if lam != 0.0 {
        out.add_scaled(g, lam)?;
    }
    Ok(out)
}

/// Sentiment loss at `X + λg` and `dL_s/dλ = ⟨∇_{X'}L_s, g⟩`.
pub fn lambda_loss_grad(net: &DamNet, ex: &ModInput, lam: f64) -> Result<(f64, f64)> {
    let xp = modulate(&ex.x, &ex.g, lam)?;
    let (loss, dx) = sentiment_input_grad(net, &xp, &ex.mask, ex.y_s)?;
    Ok((loss, dx.dot(&ex.g)?))
}

pub fn lambda_grad(net: &DamNet, ex: &ModInput, lam: f64) -> Result<f64> {
    Ok(lambda_loss_grad(net, ex, lam)?.1)
}

/// Adam over a scalar starting at 0; `grad(batch, λ)` gives the batch-mean
/// derivative. λ is clamped to `[-b, b]` after every update.
pub fn optimize_lambda(
    n_batches: usize,
    cfg: &ModulationConfig,
    mut grad: impl FnMut(usize, f64) -> Result<f64>,
) -> Result<f64> {
    let mut lam = Tensor::from_vec(vec![0.0]);
    let mut adam = AdamState::new(&[1], cfg.adam);
    for _ in 0..cfg.epochs {
        for batch in 0..n_batches {
            let g = grad(batch, lam.data()[0])?;
            adam.step(&mut lam, &Tensor::from_vec(vec![g]))?;
            let v = &mut lam.data_mut()[0];
            *v = v.clamp(-cfg.b, cfg.b);
        }
    }
    Ok(lam.data()[0])
}

/// Learns λ on a domain's training examples, reshuffled each epoch.
pub fn learn_lambda(net: &DamNet, train: &[ModInput], cfg: &ModulationConfig, rng: &mut RngStream) -> Result<f64> {
    if train.is_empty() {
        return Err(Error::invalid("no training examples for lambda learning"));
    }
    let n_batches = train.len().div_ceil(cfg.batch_size);
    let mut order: Vec<usize> = (0..train.len()).collect();
    optimize_lambda(n_batches, cfg, |batch, lam| {
        if batch == 0 {
            rng.shuffle(&mut order);
        }
        let idx = &order[batch * cfg.batch_size..((batch + 1) * cfg.batch_size).min(order.len())];
        let mut total = 0.0;
        for &i in idx {
            total += lambda_grad(net, &train[i], lam)?;
        }
        Ok(total / idx.len() as f64)
    })
}

/// Sentiment and domain metrics on a (possibly modulated) split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EvalMetrics {
    pub accuracy: f64,
    pub loss: f64,
    pub domain_accuracy: f64,
    pub domain_loss: f64,
}

/// Eval-mode metrics on `X + λg`; λ = 0 reproduces the base network exactly.
pub fn eval_modulated(net: &DamNet, data: &[ModInput], lam: f64) -> Result<EvalMetrics> {
    if data.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let mut unused = RngStream::new(0);
    let (mut correct, mut loss, mut d_correct, mut d_loss) = (0usize, 0.0, 0usize, 0.0);
    for ex in data {
        let xp = modulate(&ex.x, &ex.g, lam)?;
        let tr = forward_embedded(net, &xp, &ex.mask, Mode::Eval, &mut unused)?;
        correct += (tr.sentiment_prediction() == ex.y_s) as usize;
        d_correct += (tr.domain_prediction() == ex.y_d) as usize;
        loss += tr.sentiment_loss(ex.y_s)?;
        d_loss += tr.domain_loss(ex.y_d)?;
    }
    let n = data.len() as f64;
    Ok(EvalMetrics {
        accuracy: correct as f64 / n,
        loss: loss / n,
        domain_accuracy: d_correct as f64 / n,
        domain_loss: d_loss / n,
    })
}

/// Per-example change in domain loss, `L_d(x + λg) − L_d(x)`.
pub fn domain_loss_delta(net: &DamNet, ex: &ModInput, lam: f64) -> Result<f64> {
    let xp = modulate(&ex.x, &ex.g, lam)?;
    let after = domain_input_grad(net, &xp, &ex.mask, ex.y_d)?.loss;
    Ok(after - ex.domain_loss)
}

/// Search history of [`scale_lambda`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LambdaState {
    pub lam: f64,
    /// Tried step sizes, in evaluation order.
    pub s: Vec<f64>,
    pub a_xplus: Vec<f64>,
    pub l_xplus: Vec<f64>,
    pub count: usize,
}

impl LambdaState {
    fn record(&mut self, lam: f64, a: f64, l: f64) {
        self.lam = lam;
        self.s.push(lam);
        self.a_xplus.push(a);
        self.l_xplus.push(l);
        self.count += 1;
    }

    fn accuracy_of(&self, lam: f64) -> Option<f64> {
        self.s.iter().position(|&s| s == lam).map(|i| self.a_xplus[i])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScaleOutcome {
    pub lambda: f64,
    pub state: LambdaState,
}

fn all_equal(v: &[f64]) -> bool {
    v.windows(2).all(|w| w[0] == w[1])
}

/// Validation-driven adjustment of a learned λ.
///
/// Each round evaluates the current λ and compares its accuracy with the
/// unmodulated accuracy `a_x`:
/// - higher: keep λ and stop;
/// - lower: revert to the first λ that matched `a_x` if there is one, else
///   divide by `alpha`;
/// - equal: once `t_window` results exist and they share one accuracy but not
///   one loss, take the window's lowest-loss λ; if losses are equal too, or
///   the history is still short, multiply by `beta`; otherwise stop.
///
/// Growth past `b` keeps λ and stops. At most `n_t` evaluations are made and
/// a result scoring below `a_x` is replaced by 0.
pub fn scale_lambda(
    lam0: f64,
    a_x: f64,
    mut evaluator: impl FnMut(f64) -> Result<(f64, f64)>,
    cfg: &ModulationConfig,
) -> Result<ScaleOutcome> {
    let mut st = LambdaState::default();
    if lam0 == 0.0 {
        return Ok(ScaleOutcome { lambda: 0.0, state: st });
    }
    let mut lam = lam0;
    let chosen = loop {
        let (a, l) = evaluator(lam)?;
        st.record(lam, a, l);
        let next = if a > a_x {
            break lam;
        } else if a < a_x {
            if let Some(i) = st.a_xplus.iter().position(|&v| v == a_x) {
                break st.s[i];
            }
            lam / cfg.alpha
        } else {
            let k = st.s.len();
            if k >= cfg.t_window {
                let accs = &st.a_xplus[k - cfg.t_window..];
                let losses = &st.l_xplus[k - cfg.t_window..];
                if !all_equal(accs) {
                    break lam;
                }
                if !all_equal(losses) {
                    let mut best = 0;
                    for (i, &l) in losses.iter().enumerate() {
                        if l < losses[best] {
                            best = i;
                        }
                    }
                    break st.s[k - cfg.t_window + best];
                }
            }
            let grown = lam * cfg.beta;
            if grown.abs() > cfg.b {
                break lam;
            }
            grown
        };
        if st.count >= cfg.n_t {
            break lam;
        }
        lam = next;
    };
    st.lam = chosen;
    let lambda = match st.accuracy_of(chosen) {
        Some(a) if a >= a_x => chosen,
        _ => 0.0,
    };
    Ok(ScaleOutcome { lambda, state: st })
}

/// Measured effect of the selected λ on the validation split.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModulationEffect {
    /// Mean `L_d(x+δ) − L_d(x)`.
    pub delta_loss: f64,
    pub a_x: f64,
    pub a_xplus: f64,
    pub l_x: f64,
    pub l_xplus: f64,
}

/// One row of the b sweep.
#[derive(Clone, Debug, PartialEq)]
pub struct BoundTrial {
    pub b: f64,
    pub lambda_learned: f64,
    pub lambda_final: f64,
    pub val: EvalMetrics,
    pub history: LambdaState,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DomainStage2 {
    pub domain: usize,
    pub b: f64,
    pub lambda_learned: f64,
    pub lambda_final: f64,
    pub base_val: EvalMetrics,
    pub base_test: EvalMetrics,
    pub mod_val: EvalMetrics,
    pub mod_test: EvalMetrics,
    pub effect: ModulationEffect,
    pub sweep: Vec<BoundTrial>,
}

/// Learns and scales λ for every bound in `b_grid` and keeps the best by
/// validation accuracy, then lower loss, then smaller bound.
pub fn run_domain_stage2(
    net: &DamNet,
    domain: usize,
    train: &[ModInput],
    val: &[ModInput],
    test: &[ModInput],
    b_grid: &[f64],
    cfg: &ModulationConfig,
    rng: &RngStream,
) -> Result<DomainStage2> {
    if b_grid.is_empty() {
        return Err(Error::invalid("empty b grid"));
    }
    cfg.validate()?;
    let base_val = eval_modulated(net, val, 0.0)?;
    let base_test = eval_modulated(net, test, 0.0)?;

    let mut sweep = Vec::with_capacity(b_grid.len());
    for &b in b_grid {
        let bcfg = cfg.with_bound(b);
        bcfg.validate()?;
        let lambda_learned = learn_lambda(net, train, &bcfg, &mut rng.derive("learn"))?;
        let outcome = scale_lambda(
            lambda_learned,
            base_val.accuracy,
            |lam| eval_modulated(net, val, lam).map(|m| (m.accuracy, m.loss)),
            &bcfg,
        )?;
        let val_metrics = eval_modulated(net, val, outcome.lambda)?;
        sweep.push(BoundTrial {
            b,
            lambda_learned,
            lambda_final: outcome.lambda,
            val: val_metrics,
            history: outcome.state,
        });
    }

    let mut best = 0;
    for (i, t) in sweep.iter().enumerate().skip(1) {
        let cur = &sweep[best];
        let better = t.val.accuracy > cur.val.accuracy
            || (t.val.accuracy == cur.val.accuracy
                && (t.val.loss < cur.val.loss || (t.val.loss == cur.val.loss && t.b < cur.b)));
        if better {
            best = i;
        }
    }
    let pick = &sweep[best];
    let lam = pick.lambda_final;
    let mod_val = pick.val;
    let mod_test = eval_modulated(net, test, lam)?;
    let mut delta = 0.0;
    if lam != 0.0 {
        for ex in val {
            delta += domain_loss_delta(net, ex, lam)?;
        }
        delta /= val.len() as f64;
    }
    Ok(DomainStage2 {
        domain,
        b: pick.b,
        lambda_learned: pick.lambda_learned,
        lambda_final: lam,
        base_val,
        base_test,
        mod_val,
        mod_test,
        effect: ModulationEffect {
            delta_loss: delta,
            a_x: base_val.accuracy,
            a_xplus: mod_val.accuracy,
            l_x: base_val.loss,
            l_xplus: mod_val.loss,
        },
        sweep,
    })
}
