//! Finite-difference check of every analytic gradient in the network.

use crate::error::Result;
use crate::layers::{compare_gradients, cross_entropy_grad, GradCheckReport, GradTolerance, Mode};
use crate::net::{backward, domain_input_grad, forward, forward_embedded, joint_loss, param_grads, DamNet, Labels, NetConfig};
use crate::numerics::{finite_diff, RngStream};
use crate::xlstm::ForgetMode;

pub const VOCAB: usize = 24;

/// Small network used by the suite: embed 10, hidden 8, proj 6, 3 domains.
pub fn probe_net(seed: u64, forget_mode: ForgetMode) -> Result<DamNet> {
    let cfg = NetConfig {
        vocab_size: VOCAB,
        embed_dim: 10,
        hidden_dim: 8,
        proj_dim: 6,
        num_domains: 3,
        forget_mode,
        embed_init_scale: 0.8,
    };
    let mut net = DamNet::new(&cfg, 0.5, 0.2, &RngStream::new(seed))?;
    // keep some attention scores on the active side of the ReLU
    net.attention.b.data_mut()[0] = 0.3;
    Ok(net)
}

/// Three padded sequences of true length ≤ 12 and their labels.
pub fn probe_batch(seed: u64) -> (Vec<Vec<usize>>, Vec<Labels>) {
    let mut rng = RngStream::new(seed).derive("probe");
    let lens = [12, 7, 1];
    let ids = lens
        .iter()
        .map(|&n| {
            let mut row: Vec<usize> = (0..n).map(|_| 2 + rng.below(VOCAB - 2)).collect();
            row.resize(12, 0);
            row
        })
        .collect();
    let labels = (0..3)
        .map(|i| Labels {
            y_s: rng.below(2),
            y_d: i % 3,
        })
        .collect();
    (ids, labels)
}

/// Checks all parameter tensors, the joint-loss input gradient and the
/// domain-loss input gradient, for both forget-gate modes.
pub fn run_gradcheck(seed: u64) -> Result<Vec<GradCheckReport>> {
    let tol = GradTolerance::default();
    let mut out = Vec::new();
    for mode in [ForgetMode::Sigmoid, ForgetMode::Exponential] {
        let net = probe_net(seed, mode)?;
        let (ids, labels) = probe_batch(seed);
        let drop_seed = RngStream::new(seed).derive("dropout").next_u64();
        let gamma = net.gamma;
        let (_, grads) = param_grads(&net, &ids, &labels, gamma, Mode::Train, &mut RngStream::new(drop_seed))?;
        let loss = |n: &DamNet| -> f64 {
            forward(n, &ids, Mode::Train, &mut RngStream::new(drop_seed))
                .and_then(|tr| joint_loss(&tr, &labels, gamma))
                .unwrap_or(f64::NAN)
        };
        let analytic = grads.tensors();
        for (k, (name, base)) in net.tensors().into_iter().enumerate() {
            let numeric = finite_diff(
                |t| {
                    let mut probe = net.clone();
                    *probe.tensors_mut()[k].1 = t.clone();
                    loss(&probe)
                },
                base,
                tol.step,
            )?;
            out.push(compare_gradients(&format!("{}/{name}", mode.as_str()), analytic[k].1, &numeric, tol));
        }

        let ex = &ids[1];
        let y = labels[1];
        let mask = crate::layers::pad_mask(ex);
        let x = net.embedding.embed(ex)?;
        let example_loss = |xx: &crate::numerics::Tensor| -> f64 {
            forward_embedded(&net, xx, &mask, Mode::Eval, &mut RngStream::new(0))
                .and_then(|tr| Ok(tr.sentiment_loss(y.y_s)? + gamma * tr.domain_loss(y.y_d)?))
                .unwrap_or(f64::NAN)
        };
        let tr = forward_embedded(&net, &x, &mask, Mode::Eval, &mut RngStream::new(0))?;
        let ds = cross_entropy_grad(&tr.sentiment_head.logits, y.y_s);
        let dd: Vec<f64> = cross_entropy_grad(&tr.domain_head.logits, y.y_d).iter().map(|v| gamma * v).collect();
        let dx = backward(&net, &tr, Some(&ds), Some(&dd), None)?;
        let numeric = finite_diff(example_loss, &x, tol.step)?;
        out.push(compare_gradients(&format!("{}/input", mode.as_str()), &dx, &numeric, tol));

        let g = domain_input_grad(&net, &x, &mask, y.y_d)?.grad;
        let numeric = finite_diff(
            |xx| {
                forward_embedded(&net, xx, &mask, Mode::Eval, &mut RngStream::new(0))
                    .and_then(|tr| tr.domain_loss(y.y_d))
                    .unwrap_or(f64::NAN)
            },
            &x,
            tol.step,
        )?;
        out.push(compare_gradients(&format!("{}/input_domain", mode.as_str()), &g, &numeric, tol));
    }
    Ok(out)
}
