//! Domain-attention network.
//!
//! ```text
//! X    = embed(tokens)
//! H_d  = sLSTM_d(X)                  V_d = mean(H_d)
//! H_ds = [H_d ; X]                   H_s = sLSTM_s(H_ds)
//! s_t  = ReLU(w·[V_d ; H_s[t]] + b)  A   = softmax(s)     V_s = Σ A_t H_s[t]
//! q    = softmax(head_d(drop(ReLU(proj_d(V_d)))))
//! p    = softmax(head_s(drop(ReLU(proj_s(V_s)))))
//! L    = mean CE(p, y_s) + γ · mean CE(q, y_d)
//! ```
//!
//! Every function here works on a single example; batches are plain slices
//! processed in order so gradient accumulation is deterministic. PAD steps
//! (id 0) are skipped by both recurrences and excluded from pooling and
//! attention.

use crate::error::{Error, Result};
use crate::layers::{
    cross_entropy, cross_entropy_grad, pad_mask, DropoutSpec, EmbeddingTable, LinearParams, Mode,
};
use crate::numerics::{axpy, softmax, RngStream, Tensor};
use crate::xlstm::{slstm_backward, slstm_forward, ForgetMode, SLstmParams, SLstmTrace};

/// Architecture hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct NetConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub hidden_dim: usize,
    pub proj_dim: usize,
    pub num_domains: usize,
    pub forget_mode: ForgetMode,
    /// Embedding rows start in `U(-s, s)`.
    pub embed_init_scale: f64,
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 2 {
            return Err(Error::invalid("vocabulary must hold at least PAD and UNK"));
        }
        if self.embed_dim == 0 || self.hidden_dim == 0 || self.proj_dim == 0 {
            return Err(Error::invalid("network widths must be positive"));
        }
        if self.num_domains == 0 {
            return Err(Error::invalid("need at least one domain"));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Labels {
    /// 0 = negative, 1 = positive
    pub y_s: usize,
    pub y_d: usize,
}

/// All learnable tensors plus the joint-loss weight and classifier dropout.
///
/// A zero-filled `DamNet` (see [`DamNet::zeros_like`]) doubles as the gradient
/// accumulator, so gradients and parameters share names and layout.
#[derive(Clone, Debug, PartialEq)]
pub struct DamNet {
    pub embedding: EmbeddingTable,
    pub xlstm_d: SLstmParams,
    pub xlstm_s: SLstmParams,
    /// `2·hidden → 1`
    pub attention: LinearParams,
    pub proj_d: LinearParams,
    pub proj_s: LinearParams,
    pub head_d: LinearParams,
    pub head_s: LinearParams,
    pub gamma: f64,
    pub dropout_p: f64,
}

pub const SENTIMENT_CLASSES: usize = 2;

impl DamNet {
    pub fn new(cfg: &NetConfig, gamma: f64, dropout_p: f64, rng: &RngStream) -> Result<Self> {
        cfg.validate()?;
        if gamma < 0.0 || !gamma.is_finite() {
            return Err(Error::invalid(format!("gamma must be ≥ 0, got {gamma}")));
        }
        if !(0.0..1.0).contains(&dropout_p) {
            return Err(Error::invalid(format!("dropout must lie in [0, 1), got {dropout_p}")));
        }
        let (e, h, p) = (cfg.embed_dim, cfg.hidden_dim, cfg.proj_dim);
        Ok(DamNet {
            embedding: EmbeddingTable::random(
                &mut rng.derive("init/embedding"),
                cfg.vocab_size,
                e,
                cfg.embed_init_scale,
            )?,
            xlstm_d: SLstmParams::random(&mut rng.derive("init/xlstm_d"), e, h, cfg.forget_mode)?,
            xlstm_s: SLstmParams::random(&mut rng.derive("init/xlstm_s"), e + h, h, cfg.forget_mode)?,
            attention: LinearParams::random(&mut rng.derive("init/attention"), 2 * h, 1)?,
            proj_d: LinearParams::random(&mut rng.derive("init/proj_d"), h, p)?,
            proj_s: LinearParams::random(&mut rng.derive("init/proj_s"), h, p)?,
            head_d: LinearParams::random(&mut rng.derive("init/head_d"), p, cfg.num_domains)?,
            head_s: LinearParams::random(&mut rng.derive("init/head_s"), p, SENTIMENT_CLASSES)?,
            gamma,
            dropout_p,
        })
    }

    pub fn num_domains(&self) -> usize {
        self.head_d.output_dim()
    }

    pub fn hidden_dim(&self) -> usize {
        self.xlstm_d.hidden()
    }

    pub fn embed_dim(&self) -> usize {
        self.embedding.dim()
    }

    pub fn config(&self) -> NetConfig {
        NetConfig {
            vocab_size: self.embedding.vocab_size(),
            embed_dim: self.embed_dim(),
            hidden_dim: self.hidden_dim(),
            proj_dim: self.proj_d.output_dim(),
            num_domains: self.num_domains(),
            forget_mode: self.xlstm_d.forget_mode,
            embed_init_scale: 0.0,
        }
    }

    pub fn zeros_like(&self) -> DamNet {
        let zl = |l: &LinearParams| LinearParams::zeros(l.input_dim(), l.output_dim());
        DamNet {
            embedding: EmbeddingTable {
                weights: Tensor::zeros(self.embedding.weights.shape()),
            },
            xlstm_d: self.xlstm_d.zeros_like(),
            xlstm_s: self.xlstm_s.zeros_like(),
            attention: zl(&self.attention),
            proj_d: zl(&self.proj_d),
            proj_s: zl(&self.proj_s),
            head_d: zl(&self.head_d),
            head_s: zl(&self.head_s),
            gamma: 0.0,
            dropout_p: 0.0,
        }
    }

    /// Every parameter tensor under its canonical name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embedding".to_string(), &self.embedding.weights)];
        for (prefix, cell) in [("xlstm_d", &self.xlstm_d), ("xlstm_s", &self.xlstm_s)] {
            out.extend(cell.tensors().into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)));
        }
        for (prefix, lin) in self.linears() {
            out.push((format!("{prefix}.w"), &lin.w));
            out.push((format!("{prefix}.b"), &lin.b));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![("embedding".to_string(), &mut self.embedding.weights)];
        for (prefix, cell) in [("xlstm_d", &mut self.xlstm_d), ("xlstm_s", &mut self.xlstm_s)] {
            out.extend(cell.tensors_mut().into_iter().map(|(n, t)| (format!("{prefix}.{n}"), t)));
        }
        for (prefix, lin) in [
            ("attention", &mut self.attention),
            ("proj_d", &mut self.proj_d),
            ("proj_s", &mut self.proj_s),
            ("head_d", &mut self.head_d),
            ("head_s", &mut self.head_s),
        ] {
            out.push((format!("{prefix}.w"), &mut lin.w));
            out.push((format!("{prefix}.b"), &mut lin.b));
        }
        out
    }

    fn linears(&self) -> [(&'static str, &LinearParams); 5] {
        [
            ("attention", &self.attention),
            ("proj_d", &self.proj_d),
            ("proj_s", &self.proj_s),
            ("head_d", &self.head_d),
            ("head_s", &self.head_s),
        ]
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }
}

/// Output of the domain encoder.
#[derive(Clone, Debug)]
pub struct DomainEncoding {
    pub h_d: Tensor,
    pub v_d: Vec<f64>,
    trace: SLstmTrace,
}

/// Mean of the rows of `h` where `mask` is set.
pub fn mean_pool(h: &Tensor, mask: &[bool]) -> Result<Vec<f64>> {
    let valid = mask.iter().filter(|&&m| m).count();
    if valid == 0 {
        return Err(Error::invalid("sequence contains only PAD tokens"));
    }
    let mut out = vec![0.0; h.cols()];
    for (t, _) in mask.iter().enumerate().filter(|(_, &m)| m) {
        axpy(&mut out, 1.0, h.row(t));
    }
    let inv = 1.0 / valid as f64;
    out.iter_mut().for_each(|v| *v *= inv);
    Ok(out)
}

pub fn encode_domain(net: &DamNet, x: &Tensor, mask: &[bool]) -> Result<DomainEncoding> {
    if !mask.iter().any(|&m| m) {
        return Err(Error::invalid("sequence contains only PAD tokens"));
    }
    let trace = slstm_forward(&net.xlstm_d, x, mask)?;
    let v_d = mean_pool(&trace.h, mask)?;
    Ok(DomainEncoding {
        h_d: trace.h.clone(),
        v_d,
        trace,
    })
}

/// Sentiment-encoder input and hidden states.
#[derive(Clone, Debug)]
pub struct SentimentEncoding {
    /// `[H_d ; X]` per step
    pub h_ds: Tensor,
    pub h_s: Tensor,
    trace: SLstmTrace,
}

pub fn encode_sentiment(net: &DamNet, x: &Tensor, h_d: &Tensor, mask: &[bool]) -> Result<SentimentEncoding> {
    if x.rows() != h_d.rows() {
        return Err(Error::Shape {
            op: "encode_sentiment",
            left: x.shape().to_vec(),
            right: h_d.shape().to_vec(),
        });
    }
    let (n, hd, e) = (x.rows(), h_d.cols(), x.cols());
    let mut data = Vec::with_capacity(n * (hd + e));
    for t in 0..n {
        data.extend_from_slice(h_d.row(t));
        data.extend_from_slice(x.row(t));
    }
    let h_ds = Tensor::new(vec![n, hd + e], data)?;
    let trace = slstm_forward(&net.xlstm_s, &h_ds, mask)?;
    Ok(SentimentEncoding {
        h_s: trace.h.clone(),
        h_ds,
        trace,
    })
}

/// Domain-query attention over sentiment states.
#[derive(Clone, Debug)]
pub struct Attention {
    /// Pre-ReLU scores (0 at PAD steps).
    pub pre: Vec<f64>,
    /// `S`, post-ReLU.
    pub scores: Vec<f64>,
    /// `A_ttn`; exactly 0 at PAD steps.
    pub weights: Vec<f64>,
    pub v_s: Vec<f64>,
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

pub fn attend(net: &DamNet, v_d: &[f64], h_s: &Tensor, mask: &[bool]) -> Result<Attention> {
    if v_d.len() != h_s.cols() || net.attention.input_dim() != v_d.len() + h_s.cols() {
        return Err(Error::Shape {
            op: "attend",
            left: vec![v_d.len()],
            right: h_s.shape().to_vec(),
        });
    }
    let n = h_s.rows();
    let mut pre = vec![0.0; n];
    let mut scores = vec![0.0; n];
    let valid: Vec<usize> = (0..n).filter(|&t| mask[t]).collect();
    for &t in &valid {
        pre[t] = net.attention.forward_vec(&concat(v_d, h_s.row(t)))[0];
        scores[t] = pre[t].max(0.0);
    }
    let probs = softmax(&valid.iter().map(|&t| scores[t]).collect::<Vec<_>>());
    let mut weights = vec![0.0; n];
    let mut v_s = vec![0.0; h_s.cols()];
    for (&t, &a) in valid.iter().zip(&probs) {
        weights[t] = a;
        axpy(&mut v_s, a, h_s.row(t));
    }
    Ok(Attention {
        pre,
        scores,
        weights,
        v_s,
    })
}

/// One classifier head: `softmax(head(dropout(ReLU(proj(v)))))`.
#[derive(Clone, Debug)]
pub struct HeadOutput {
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
    proj_pre: Vec<f64>,
    dropped: Vec<f64>,
    drop_mask: Vec<f64>,
}

fn run_head(proj: &LinearParams, head: &LinearParams, v: &[f64], spec: DropoutSpec, rng: &mut RngStream) -> HeadOutput {
    let proj_pre = proj.forward_vec(v);
    let drop_mask = spec.mask(proj_pre.len(), rng);
    let dropped: Vec<f64> = proj_pre
        .iter()
        .zip(&drop_mask)
        .map(|(&u, &m)| u.max(0.0) * m)
        .collect();
    let logits = head.forward_vec(&dropped);
    HeadOutput {
        probs: softmax(&logits),
        logits,
        proj_pre,
        dropped,
        drop_mask,
    }
}

fn head_backward(
    proj: &LinearParams,
    head: &LinearParams,
    out: &HeadOutput,
    v: &[f64],
    dlogits: &[f64],
    grads: Option<(&mut LinearParams, &mut LinearParams)>,
) -> Vec<f64> {
    let (gp, gh) = match grads {
        Some((p, h)) => (Some(p), Some(h)),
        None => (None, None),
    };
    let ddrop = head.backward_vec(&out.dropped, dlogits, gh);
    let du: Vec<f64> = ddrop
        .iter()
        .zip(&out.drop_mask)
        .zip(&out.proj_pre)
        .map(|((d, m), &u)| if u > 0.0 { d * m } else { 0.0 })
        .collect();
    proj.backward_vec(v, &du, gp)
}

fn dropout_spec(net: &DamNet, mode: Mode) -> DropoutSpec {
    DropoutSpec {
        p: net.dropout_p,
        mode,
    }
}

pub fn classify_domain(net: &DamNet, v_d: &[f64], rng: &mut RngStream, mode: Mode) -> HeadOutput {
    run_head(&net.proj_d, &net.head_d, v_d, dropout_spec(net, mode), rng)
}

pub fn classify_sentiment(net: &DamNet, v_s: &[f64], rng: &mut RngStream, mode: Mode) -> HeadOutput {
    run_head(&net.proj_s, &net.head_s, v_s, dropout_spec(net, mode), rng)
}

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(v: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in v.iter().enumerate().skip(1) {
        if x > v[best] {
            best = i;
        }
    }
    best
}

/// Everything computed for one example.
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Token ids when the trace started from ids rather than raw embeddings.
    pub ids: Option<Vec<usize>>,
    pub mask: Vec<bool>,
    pub x: Tensor,
    pub domain: DomainEncoding,
    pub sentiment: SentimentEncoding,
    pub attention: Attention,
    pub domain_head: HeadOutput,
    pub sentiment_head: HeadOutput,
}

impl ForwardTrace {
    pub fn h_d(&self) -> &Tensor {
        &self.domain.h_d
    }

    pub fn v_d(&self) -> &[f64] {
        &self.domain.v_d
    }

    pub fn h_ds(&self) -> &Tensor {
        &self.sentiment.h_ds
    }

    pub fn h_s(&self) -> &Tensor {
        &self.sentiment.h_s
    }

    pub fn a_ttn(&self) -> &[f64] {
        &self.attention.weights
    }

    pub fn v_s(&self) -> &[f64] {
        &self.attention.v_s
    }

    /// Domain distribution `q`.
    pub fn q(&self) -> &[f64] {
        &self.domain_head.probs
    }

    /// Sentiment distribution `p`.
    pub fn p(&self) -> &[f64] {
        &self.sentiment_head.probs
    }

    pub fn sentiment_prediction(&self) -> usize {
        argmax(self.p())
    }

    pub fn domain_prediction(&self) -> usize {
        argmax(self.q())
    }

    pub fn sentiment_loss(&self, y_s: usize) -> Result<f64> {
        cross_entropy(&self.sentiment_head.logits, y_s)
    }

    pub fn domain_loss(&self, y_d: usize) -> Result<f64> {
        cross_entropy(&self.domain_head.logits, y_d)
    }
}

/// Full forward pass from an embedding matrix. Dropout masks are drawn from
/// `rng` (domain head first) only in train mode.
pub fn forward_embedded(net: &DamNet, x: &Tensor, mask: &[bool], mode: Mode, rng: &mut RngStream) -> Result<ForwardTrace> {
    if x.cols() != net.embed_dim() {
        return Err(Error::Shape {
            op: "forward_embedded",
            left: x.shape().to_vec(),
            right: vec![net.embed_dim()],
        });
    }
    let domain = encode_domain(net, x, mask)?;
    let sentiment = encode_sentiment(net, x, &domain.h_d, mask)?;
    let attention = attend(net, &domain.v_d, &sentiment.h_s, mask)?;
    let domain_head = classify_domain(net, &domain.v_d, rng, mode);
    let sentiment_head = classify_sentiment(net, &attention.v_s, rng, mode);
    Ok(ForwardTrace {
        ids: None,
        mask: mask.to_vec(),
        x: x.clone(),
        domain,
        sentiment,
        attention,
        domain_head,
        sentiment_head,
    })
}

pub fn forward_ids(net: &DamNet, ids: &[usize], mode: Mode, rng: &mut RngStream) -> Result<ForwardTrace> {
    let x = net.embedding.embed(ids)?;
    let mut tr = forward_embedded(net, &x, &pad_mask(ids), mode, rng)?;
    tr.ids = Some(ids.to_vec());
    Ok(tr)
}

/// Forward over a batch of (padded) token sequences, in order.
pub fn forward(net: &DamNet, batch: &[Vec<usize>], mode: Mode, rng: &mut RngStream) -> Result<Vec<ForwardTrace>> {
    if batch.is_empty() {
        return Err(Error::invalid("empty batch"));
    }
    batch.iter().map(|ids| forward_ids(net, ids, mode, rng)).collect()
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    /// Batch-mean sentiment cross-entropy.
    pub sentiment: f64,
    /// Batch-mean domain cross-entropy (unweighted).
    pub domain: f64,
    pub total: f64,
}

pub fn loss_terms(traces: &[ForwardTrace], labels: &[Labels], gamma: f64) -> Result<LossTerms> {
    if traces.len() != labels.len() || traces.is_empty() {
        return Err(Error::invalid(format!(
            "{} traces vs {} labels",
            traces.len(),
            labels.len()
        )));
    }
    let mut ls = 0.0;
    let mut ld = 0.0;
    for (tr, y) in traces.iter().zip(labels) {
        ls += tr.sentiment_loss(y.y_s)?;
        ld += tr.domain_loss(y.y_d)?;
    }
    let b = traces.len() as f64;
    let (sentiment, domain) = (ls / b, ld / b);
    Ok(LossTerms {
        sentiment,
        domain,
        total: sentiment + gamma * domain,
    })
}

/// `mean CE_s + γ · mean CE_d`
pub fn joint_loss(traces: &[ForwardTrace], labels: &[Labels], gamma: f64) -> Result<f64> {
    Ok(loss_terms(traces, labels, gamma)?.total)
}

/// Reverse pass for one trace given logit gradients of both heads.
/// Accumulates parameter gradients (including embedding rows when the trace
/// has token ids) and returns `∂L/∂X`.
pub fn backward(
    net: &DamNet,
    tr: &ForwardTrace,
    dlogits_s: Option<&[f64]>,
    dlogits_d: Option<&[f64]>,
    mut grads: Option<&mut DamNet>,
) -> Result<Tensor> {
    let h = net.hidden_dim();
    let n = tr.x.rows();
    let v_d = tr.v_d();
    let mut dv_d = vec![0.0; h];
    let mut dh_s = Tensor::zeros(&[n, h]);

    if let Some(dls) = dlogits_s {
        let g = grads.as_deref_mut().map(|g| (&mut g.proj_s, &mut g.head_s));
        let dv_s = head_backward(&net.proj_s, &net.head_s, &tr.sentiment_head, tr.v_s(), dls, g);

        let att = &tr.attention;
        let mut da = vec![0.0; n];
        let mut weighted = 0.0;
        for t in (0..n).filter(|&t| tr.mask[t]) {
            da[t] = dv_s.iter().zip(tr.h_s().row(t)).map(|(a, b)| a * b).sum();
            weighted += att.weights[t] * da[t];
            axpy(dh_s.row_mut(t), att.weights[t], &dv_s);
        }
        for t in (0..n).filter(|&t| tr.mask[t]) {
            let ds = att.weights[t] * (da[t] - weighted);
            if att.pre[t] <= 0.0 || ds == 0.0 {
                continue;
            }
            let input = concat(v_d, tr.h_s().row(t));
            let di = net
                .attention
                .backward_vec(&input, &[ds], grads.as_deref_mut().map(|g| &mut g.attention));
            axpy(&mut dv_d, 1.0, &di[..h]);
            axpy(dh_s.row_mut(t), 1.0, &di[h..]);
        }
    }

    if let Some(dld) = dlogits_d {
        let g = grads.as_deref_mut().map(|g| (&mut g.proj_d, &mut g.head_d));
        let d = head_backward(&net.proj_d, &net.head_d, &tr.domain_head, v_d, dld, g);
        axpy(&mut dv_d, 1.0, &d);
    }

    let mut dh_d = Tensor::zeros(&[n, h]);
    let mut dx = Tensor::zeros(&[n, net.embed_dim()]);
    if dlogits_s.is_some() {
        let dh_ds = slstm_backward(
            &net.xlstm_s,
            tr.h_ds(),
            &tr.sentiment.trace,
            &dh_s,
            grads.as_deref_mut().map(|g| &mut g.xlstm_s),
        )?;
        for t in 0..n {
            let row = dh_ds.row(t);
            dh_d.row_mut(t).copy_from_slice(&row[..h]);
            dx.row_mut(t).copy_from_slice(&row[h..]);
        }
    }
    let valid = tr.mask.iter().filter(|&&m| m).count() as f64;
    for t in (0..n).filter(|&t| tr.mask[t]) {
        axpy(dh_d.row_mut(t), 1.0 / valid, &dv_d);
    }
    let dx_d = slstm_backward(
        &net.xlstm_d,
        &tr.x,
        &tr.domain.trace,
        &dh_d,
        grads.as_deref_mut().map(|g| &mut g.xlstm_d),
    )?;
    dx.add_scaled(&dx_d, 1.0)?;

    if let (Some(g), Some(ids)) = (grads, tr.ids.as_ref()) {
        for (t, &id) in ids.iter().enumerate().filter(|(t, _)| tr.mask[*t]) {
            axpy(g.embedding.weights.row_mut(id), 1.0, dx.row(t));
        }
    }
    Ok(dx)
}

/// Exact gradients of the joint loss with respect to every tensor in `net`.
pub fn param_grads(
    net: &DamNet,
    batch: &[Vec<usize>],
    labels: &[Labels],
    gamma: f64,
    mode: Mode,
    rng: &mut RngStream,
) -> Result<(LossTerms, DamNet)> {
    let traces = forward(net, batch, mode, rng)?;
    let terms = loss_terms(&traces, labels, gamma)?;
    if !terms.total.is_finite() {
        return Err(Error::NonFinite(format!(
            "joint loss: sentiment={}, domain={}",
            terms.sentiment, terms.domain
        )));
    }
    let mut grads = net.zeros_like();
    let inv_b = 1.0 / batch.len() as f64;
    for (tr, y) in traces.iter().zip(labels) {
        let mut ds = cross_entropy_grad(&tr.sentiment_head.logits, y.y_s);
        ds.iter_mut().for_each(|v| *v *= inv_b);
        let mut dd = cross_entropy_grad(&tr.domain_head.logits, y.y_d);
        dd.iter_mut().for_each(|v| *v *= gamma * inv_b);
        backward(net, tr, Some(&ds), Some(&dd), Some(&mut grads))?;
    }
    Ok((terms, grads))
}

/// Domain-path output used by the modulation stage.
#[derive(Clone, Debug)]
pub struct DomainGrad {
    /// Unweighted domain cross-entropy at `x`.
    pub loss: f64,
    /// `∂L_d/∂X`, zero at PAD rows.
    pub grad: Tensor,
    pub prediction: usize,
}

/// Gradient of the unweighted domain cross-entropy with respect to the input
/// embeddings, in eval mode. Only the domain path is evaluated.
pub fn domain_input_grad(net: &DamNet, x: &Tensor, mask: &[bool], y_d: usize) -> Result<DomainGrad> {
    if y_d >= net.num_domains() {
        return Err(Error::LabelOutOfRange {
            label: y_d,
            classes: net.num_domains(),
        });
    }
    let domain = encode_domain(net, x, mask)?;
    let mut unused = RngStream::new(0);
    let head = classify_domain(net, &domain.v_d, &mut unused, Mode::Eval);
    let loss = cross_entropy(&head.logits, y_d)?;
    let dlogits = cross_entropy_grad(&head.logits, y_d);
    let dv_d = head_backward(&net.proj_d, &net.head_d, &head, &domain.v_d, &dlogits, None);
    let n = x.rows();
    let valid = mask.iter().filter(|&&m| m).count() as f64;
    let mut dh_d = Tensor::zeros(&[n, net.hidden_dim()]);
    for t in (0..n).filter(|&t| mask[t]) {
        axpy(dh_d.row_mut(t), 1.0 / valid, &dv_d);
    }
    let grad = slstm_backward(&net.xlstm_d, x, &domain.trace, &dh_d, None)?;
    Ok(DomainGrad {
        loss,
        grad,
        prediction: argmax(&head.probs),
    })
}

/// [`domain_input_grad`] starting from token ids.
pub fn input_grad_domain(net: &DamNet, ids: &[usize], y_d: usize) -> Result<Tensor> {
    let x = net.embedding.embed(ids)?;
    Ok(domain_input_grad(net, &x, &pad_mask(ids), y_d)?.grad)
}

/// Sentiment loss at `x` and its gradient with respect to `x`, in eval mode.
pub fn sentiment_input_grad(net: &DamNet, x: &Tensor, mask: &[bool], y_s: usize) -> Result<(f64, Tensor)> {
    let mut unused = RngStream::new(0);
    let tr = forward_embedded(net, x, mask, Mode::Eval, &mut unused)?;
    let loss = tr.sentiment_loss(y_s)?;
    let dlogits = cross_entropy_grad(&tr.sentiment_head.logits, y_s);
    let dx = backward(net, &tr, Some(&dlogits), None, None)?;
    Ok((loss, dx))
}
