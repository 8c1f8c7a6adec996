use serde::{Deserialize, Serialize};

use super::{Policy, PolicyError, ReferencePolicy};

/// Policy input paired with the bin the demonstrator chose.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Demonstration {
    pub x: Vec<f64>,
    pub bin: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BcConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
}

impl Default for BcConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            epochs: 300,
            l2: 1e-4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BcReport {
    pub loss_trace: Vec<f64>,
    pub final_loss: f64,
    pub train_accuracy: f64,
}

/// Mean cross-entropy of the demonstrated bins plus `l2 * |params|^2`, and its gradient.
pub fn cross_entropy(policy: &Policy, demos: &[Demonstration], l2: f64) -> (f64, Vec<f64>) {
    let n = demos.len().max(1) as f64;
    let mut g = vec![0.0; policy.params.len()];
    let mut loss = 0.0;
    for d in demos {
        let p = policy.probs(&d.x);
        loss -= p[d.bin].ln().max(super::PROB_FLOOR.ln()) / n;
        policy.accumulate_grad_log_prob(&d.x, d.bin, -1.0 / n, &mut g);
    }
    for (gi, w) in g.iter_mut().zip(&policy.params) {
        loss += l2 * w * w;
        *gi += 2.0 * l2 * w;
    }
    (loss, g)
}

/// Full-batch gradient descent on the cross-entropy, starting from `init`.
/// Each epoch backtracks until the loss does not increase.
pub fn behavior_clone(
    init: Policy,
    demos: &[Demonstration],
    cfg: &BcConfig,
    provenance: &str,
) -> Result<(ReferencePolicy, BcReport), PolicyError> {
    if demos.is_empty() {
        return Err(PolicyError::EmptyDemonstrations);
    }
    if !(cfg.learning_rate > 0.0 && cfg.l2 >= 0.0) {
        return Err(PolicyError::InvalidConfig("learning_rate must be > 0 and l2 >= 0".into()));
    }
    let d = init.input_dim();
    for demo in demos {
        if demo.x.len() != d || demo.bin >= init.n_actions() {
            return Err(PolicyError::DimensionMismatch(format!(
                "demonstration with {} inputs / bin {} does not fit policy ({d} inputs, {} bins)",
                demo.x.len(),
                demo.bin,
                init.n_actions()
            )));
        }
    }
    let mut policy = init;
    let (mut loss, mut grad) = cross_entropy(&policy, demos, cfg.l2);
    let mut trace = vec![loss];
    for _ in 0..cfg.epochs {
        let mut lr = cfg.learning_rate;
        let mut accepted = false;
        for _ in 0..40 {
            let mut cand = policy.clone();
            for (p, g) in cand.params.iter_mut().zip(&grad) {
                *p -= lr * g;
            }
            let (l, g) = cross_entropy(&cand, demos, cfg.l2);
            if l.is_finite() && l <= loss {
                policy = cand;
                loss = l;
                grad = g;
                accepted = true;
                break;
            }
            lr *= 0.5;
        }
        trace.push(loss);
        if !accepted {
            break;
        }
    }
    let correct = demos.iter().filter(|d| policy.greedy(&d.x) == d.bin).count();
    let report = BcReport {
        final_loss: loss,
        loss_trace: trace,
        train_accuracy: correct as f64 / demos.len() as f64,
    };
    Ok((ReferencePolicy::new(policy, provenance), report))
}
