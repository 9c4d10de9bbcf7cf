//! Finite-difference oracle for network and DDPG gradients, built on an
//! independent loop-based forward pass.

use platoon_guard::ddpg::{Agent, AgentConfig, Transition};
use platoon_guard::nn::{DenseNet, OutputHead};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;
/// Central differences on values of order one carry roughly 1e-10 of
/// rounding noise, so gradients below this floor are compared absolutely.
const ABS_FLOOR: f64 = 1e-8;

fn head_value(head: OutputHead, u: f64) -> f64 {
    match head {
        OutputHead::Linear => u,
        OutputHead::ScaledTanh { min, max } => min + (max - min) * (u.tanh() + 1.0) / 2.0,
    }
}

/// Returns (outputs, pre-head values, every hidden pre-activation) for one sample.
fn naive_forward(net: &DenseNet, x: &[f64]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut a = x.to_vec();
    let mut hidden = Vec::new();
    let layers = net.layers();
    for (k, l) in layers.iter().enumerate() {
        let mut z = vec![0.0; l.outputs];
        for (j, zj) in z.iter_mut().enumerate() {
            let mut s = l.biases[j];
            for (i, ai) in a.iter().enumerate() {
                s += ai * l.weights[i * l.outputs + j];
            }
            *zj = s;
        }
        if k + 1 < layers.len() {
            hidden.extend_from_slice(&z);
            a = z.iter().map(|v| v.max(0.0)).collect();
        } else {
            let out = z.iter().map(|&u| head_value(net.head(), u)).collect();
            return (out, z, hidden);
        }
    }
    unreachable!()
}

fn close(analytic: f64, numeric: f64) -> bool {
    let scale = analytic.abs().max(numeric.abs());
    (analytic - numeric).abs() <= REL_TOL * scale + ABS_FLOOR
}

fn random_net(rng: &mut ChaCha8Rng) -> DenseNet {
    let depth = rng.random_range(1..=4);
    let mut sizes = vec![rng.random_range(1..=5)];
    for _ in 1..depth {
        sizes.push(rng.random_range(1..=6));
    }
    sizes.push(rng.random_range(1..=3));
    let head = if rng.random_bool(0.5) {
        OutputHead::Linear
    } else {
        OutputHead::ScaledTanh { min: -7.5, max: 3.0 }
    };
    DenseNet::random(&sizes, head, 1.0, rng).unwrap()
}

/// Inputs whose hidden pre-activations all stay clear of the ReLU kink.
fn safe_inputs(net: &DenseNet, batch: usize, rng: &mut ChaCha8Rng) -> Option<Vec<f64>> {
    let d = net.input_dim();
    for _ in 0..50 {
        let x: Vec<f64> = (0..batch * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let ok = x
            .chunks_exact(d)
            .all(|row| naive_forward(net, row).2.iter().all(|z| z.abs() > 1e-3));
        if ok {
            return Some(x);
        }
    }
    None
}

fn weighted_loss(net: &DenseNet, x: &[f64], c: &[f64]) -> f64 {
    let d = net.input_dim();
    let o = net.output_dim();
    x.chunks_exact(d)
        .zip(c.chunks_exact(o))
        .map(|(row, w)| naive_forward(net, row).0.iter().zip(w).map(|(a, b)| a * b).sum::<f64>())
        .sum()
}

#[derive(Debug, Default)]
pub struct GradCheck {
    pub cases: usize,
    pub entries: usize,
    /// Largest `|analytic − numeric| / max(|analytic|, |numeric|)` among
    /// entries above the absolute floor.
    pub worst_relative: f64,
    pub mismatches: Vec<String>,
}

impl GradCheck {
    fn record(&mut self, what: String, analytic: f64, numeric: f64) {
        self.entries += 1;
        let scale = analytic.abs().max(numeric.abs());
        if scale > ABS_FLOOR / REL_TOL {
            self.worst_relative = self.worst_relative.max((analytic - numeric).abs() / scale);
        }
        if !close(analytic, numeric) {
            self.mismatches.push(format!("{what}: analytic {analytic} vs numeric {numeric}"));
        }
    }

    pub fn passed(&self) -> bool {
        self.mismatches.is_empty()
    }
}

fn central<F: FnMut(f64) -> f64>(p: f64, mut f: F) -> f64 {
    let up = f(p + H);
    let down = f(p - H);
    (up - down) / (2.0 * H)
}

/// Random small networks with random heads, batches and upstream weights.
pub fn check_dense_networks(cases: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck::default();
    while out.cases < cases {
        let mut net = random_net(&mut rng);
        let batch = rng.random_range(1..=4);
        let Some(x) = safe_inputs(&net, batch, &mut rng) else { continue };
        let c: Vec<f64> = (0..batch * net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let k = out.cases;

        let tape = net.forward_tape(&x, batch).unwrap();
        let reference: Vec<f64> = x
            .chunks_exact(net.input_dim())
            .flat_map(|row| naive_forward(&net, row).0)
            .collect();
        for (a, b) in tape.output().iter().zip(&reference) {
            if (a - b).abs() > 1e-12 * (1.0 + b.abs()) {
                out.mismatches.push(format!("case {k} forward: {a} vs {b}"));
            }
        }
        let (grads, input_grad) = net.backward(&tape, &c).unwrap();
        for (idx, g) in grads.iter().enumerate() {
            let p = *net.param_mut(idx).unwrap();
            let fd = central(p, |v| {
                *net.param_mut(idx).unwrap() = v;
                weighted_loss(&net, &x, &c)
            });
            *net.param_mut(idx).unwrap() = p;
            out.record(format!("case {k} param {idx}"), g, fd);
        }
        let mut xp = x.clone();
        for (i, &g) in input_grad.iter().enumerate() {
            let v = xp[i];
            let fd = central(v, |t| {
                xp[i] = t;
                weighted_loss(&net, &xp, &c)
            });
            xp[i] = v;
            out.record(format!("case {k} input {i}"), g, fd);
        }
        out.cases += 1;
    }
    out
}

fn normalise(s: &[f64; 8]) -> Vec<f64> {
    let scale = [50.0, 50.0, 25.0, 25.0, 25.0, 7.5, 7.5, 7.5];
    s.iter().zip(scale).map(|(v, k)| v / k).collect()
}

fn random_batch(rng: &mut ChaCha8Rng, n: usize) -> Vec<Transition> {
    let mut state = || {
        [
            rng.random_range(1.0..40.0),
            rng.random_range(1.0..40.0),
            rng.random_range(0.0..30.0),
            rng.random_range(0.0..30.0),
            rng.random_range(0.0..30.0),
            rng.random_range(-7.0..3.0),
            rng.random_range(-7.0..3.0),
            rng.random_range(-7.0..3.0),
        ]
    };
    (0..n)
        .map(|k| Transition {
            state: state(),
            action: -7.5 + 10.5 * (k as f64 + 0.5) / n as f64,
            reward: if k % 3 == 0 { -3000.0 } else { 15.0 },
            next_state: state(),
            done: k % 3 == 0,
        })
        .collect()
}

fn small_agent(rng: &mut ChaCha8Rng, penalty: f64) -> Agent {
    let cfg = AgentConfig {
        hidden: vec![rng.random_range(2..=5), rng.random_range(2..=5)],
        actor_preact_penalty: penalty,
        reward_scale: 0.001,
        ..AgentConfig::default()
    };
    let actor = DenseNet::random(&cfg.actor_sizes(), cfg.actor_head(), 1.0, rng).unwrap();
    let critic = DenseNet::random(&cfg.critic_sizes(), OutputHead::Linear, 1.0, rng).unwrap();
    Agent::from_networks(cfg, actor, critic)
}

fn q_oracle(critic: &DenseNet, s: &[f64; 8], a: f64) -> f64 {
    let mut x = normalise(s);
    x.push(a / 7.5);
    naive_forward(critic, &x).0[0]
}

fn actor_loss(agent: &Agent, batch: &[Transition]) -> f64 {
    let n = batch.len() as f64;
    let penalty = agent.config.actor_preact_penalty;
    batch
        .iter()
        .map(|t| {
            let (out, u, _) = naive_forward(&agent.actor, &normalise(&t.state));
            -q_oracle(&agent.critic, &t.state, out[0]) + penalty * u[0] * u[0]
        })
        .sum::<f64>()
        / n
}

fn critic_loss(agent: &Agent, batch: &[Transition], targets: &[f64]) -> f64 {
    batch
        .iter()
        .zip(targets)
        .map(|(t, y)| (q_oracle(&agent.critic, &t.state, t.action) - y).powi(2))
        .sum::<f64>()
        / batch.len() as f64
}

fn clear_of_kinks(agent: &Agent, batch: &[Transition]) -> bool {
    batch.iter().all(|t| {
        let (out, _, hidden_a) = naive_forward(&agent.actor, &normalise(&t.state));
        let mut x = normalise(&t.state);
        x.push(out[0] / 7.5);
        let mut xa = normalise(&t.state);
        xa.push(t.action / 7.5);
        let hidden_q = naive_forward(&agent.critic, &x).2;
        let hidden_qa = naive_forward(&agent.critic, &xa).2;
        hidden_a.iter().chain(&hidden_q).chain(&hidden_qa).all(|z| z.abs() > 1e-3)
    })
}

/// Actor loss (through the critic, with and without the pre-tanh penalty)
/// and critic Bellman loss on random small agents and batches.
pub fn check_ddpg(cases: usize, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = GradCheck::default();
    while out.cases < cases {
        let penalty = if out.cases % 2 == 0 { 0.0 } else { 0.3 };
        let mut agent = small_agent(&mut rng, penalty);
        let n = rng.random_range(1..=6);
        let batch = random_batch(&mut rng, n);
        if !clear_of_kinks(&agent, &batch) {
            continue;
        }
        let k = out.cases;

        let (grads, objective) = agent.actor_gradient(&batch).unwrap();
        let q_mean = batch
            .iter()
            .map(|t| {
                let a = naive_forward(&agent.actor, &normalise(&t.state)).0[0];
                q_oracle(&agent.critic, &t.state, a)
            })
            .sum::<f64>()
            / batch.len() as f64;
        if (objective - q_mean).abs() > 1e-12 * (1.0 + q_mean.abs()) {
            out.mismatches.push(format!("case {k} objective: {objective} vs {q_mean}"));
        }
        for (idx, g) in grads.iter().enumerate() {
            let p = *agent.actor.param_mut(idx).unwrap();
            let fd = central(p, |v| {
                *agent.actor.param_mut(idx).unwrap() = v;
                actor_loss(&agent, &batch)
            });
            *agent.actor.param_mut(idx).unwrap() = p;
            out.record(format!("actor case {k} param {idx}"), g, fd);
        }

        let targets = agent.bellman_targets(&batch).unwrap();
        let (grads, loss) = agent.critic_gradient(&batch, &targets).unwrap();
        let reference = critic_loss(&agent, &batch, &targets);
        if (loss - reference).abs() > 1e-12 * (1.0 + loss) {
            out.mismatches.push(format!("case {k} critic loss: {loss} vs {reference}"));
        }
        for (idx, g) in grads.iter().enumerate() {
            let p = *agent.critic.param_mut(idx).unwrap();
            let fd = central(p, |v| {
                *agent.critic.param_mut(idx).unwrap() = v;
                critic_loss(&agent, &batch, &targets)
            });
            *agent.critic.param_mut(idx).unwrap() = p;
            out.record(format!("critic case {k} param {idx}"), g, fd);
        }
        out.cases += 1;
    }
    out
}
