use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::sim::{ActionBins, Observation, SensorConfig};

pub const POLICY_FORMAT_VERSION: u32 = 1;
/// Probabilities are floored here before taking logs.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicyArch {
    Linear,
    Mlp { hidden: usize },
}

/// Core-feature indices of the ego's own longitudinal and lateral acceleration.
/// The policy does not read them: they echo its previous action, and a clone
/// that sees them learns to keep braking rather than when to start.
pub const OWN_ACCEL: [usize; 2] = [1, 2];

/// What the policy reads: scaled observation features plus a bias, or a raw vector.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum PolicyInput {
    Observation { sensor: SensorConfig },
    Raw { dim: usize },
}

impl PolicyInput {
    pub fn dim(&self) -> usize {
        match self {
            PolicyInput::Observation { sensor } => Observation::core_len(sensor) - OWN_ACCEL.len() + 1,
            PolicyInput::Raw { dim } => *dim,
        }
    }
}

/// Softmax policy over a fixed action-bin table.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub format_version: u32,
    pub arch: PolicyArch,
    pub input: PolicyInput,
    pub bins: ActionBins,
    pub temperature: f64,
    /// Per-input standardization applied by [`Policy::features`]; empty means identity.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input_mean: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub input_scale: Vec<f64>,
    pub params: Vec<f64>,
}

pub fn log_softmax(z: &[f64]) -> Vec<f64> {
    let m = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
    z.iter().map(|v| v - lse).collect()
}

impl Policy {
    pub fn n_params(arch: PolicyArch, input_dim: usize, n_actions: usize) -> usize {
        match arch {
            PolicyArch::Linear => n_actions * input_dim,
            PolicyArch::Mlp { hidden } => hidden * input_dim + hidden + n_actions * hidden + n_actions,
        }
    }

    /// Uniform initial policy; MLP hidden weights get small seeded noise.
    pub fn new(
        arch: PolicyArch,
        input: PolicyInput,
        bins: ActionBins,
        temperature: f64,
        seed: u64,
    ) -> Result<Self, PolicyError> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(PolicyError::InvalidConfig(format!("temperature {temperature} must be > 0")));
        }
        if let PolicyArch::Mlp { hidden: 0 } = arch {
            return Err(PolicyError::InvalidConfig("hidden width must be > 0".into()));
        }
        let d = input.dim();
        let a = bins.len();
        let mut params = vec![0.0; Self::n_params(arch, d, a)];
        if let PolicyArch::Mlp { hidden } = arch {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let normal = Normal::new(0.0, 1.0 / (d as f64).sqrt()).expect("valid sd");
            for w in params.iter_mut().take(hidden * d) {
                *w = normal.sample(&mut rng);
            }
        }
        Ok(Self {
            format_version: POLICY_FORMAT_VERSION,
            arch,
            input,
            bins,
            temperature,
            input_mean: Vec::new(),
            input_scale: Vec::new(),
            params,
        })
    }

    pub fn n_actions(&self) -> usize {
        self.bins.len()
    }

    pub fn input_dim(&self) -> usize {
        self.input.dim()
    }

    /// Input vector for an observation: scaled core features without
    /// [`OWN_ACCEL`], standardized if fitted, and a trailing 1.
    pub fn features(&self, obs: &Observation) -> Result<Vec<f64>, PolicyError> {
        match &self.input {
            PolicyInput::Observation { sensor } => {
                if obs.rays.len() != sensor.rays || obs.nearest.len() != sensor.nearest_k {
                    return Err(PolicyError::DimensionMismatch(format!(
                        "observation has {} rays / {} neighbours, policy expects {} / {}",
                        obs.rays.len(),
                        obs.nearest.len(),
                        sensor.rays,
                        sensor.nearest_k
                    )));
                }
                let mut x: Vec<f64> = obs
                    .core_features(sensor)
                    .into_iter()
                    .enumerate()
                    .filter(|(i, _)| !OWN_ACCEL.contains(i))
                    .map(|(_, v)| v)
                    .collect();
                x.push(1.0);
                self.standardize(&mut x);
                Ok(x)
            }
            PolicyInput::Raw { .. } => Err(PolicyError::DimensionMismatch(
                "policy reads raw vectors, not observations".into(),
            )),
        }
    }

    fn standardize(&self, x: &mut [f64]) {
        if self.input_mean.len() != x.len() {
            return;
        }
        for ((v, m), s) in x.iter_mut().zip(&self.input_mean).zip(&self.input_scale) {
            *v = (*v - m) / s;
        }
    }

    /// Sets the input standardization from unstandardized feature vectors.
    /// Constant columns (the bias among them) are left as they are.
    pub fn fit_input_standardization(&mut self, xs: &[Vec<f64>]) {
        let d = self.input_dim();
        self.input_mean = vec![0.0; d];
        self.input_scale = vec![1.0; d];
        if xs.is_empty() {
            return;
        }
        let n = xs.len() as f64;
        for i in 0..d {
            let m = xs.iter().map(|x| x[i]).sum::<f64>() / n;
            let sd = (xs.iter().map(|x| (x[i] - m).powi(2)).sum::<f64>() / n).sqrt();
            if sd > 1e-9 {
                self.input_mean[i] = m;
                self.input_scale[i] = sd;
            }
        }
    }

    /// Raw logits; hidden activations are returned for the MLP.
    fn forward(&self, x: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let d = self.input_dim();
        let a = self.n_actions();
        match self.arch {
            PolicyArch::Linear => {
                let z = (0..a)
                    .map(|k| self.params[k * d..(k + 1) * d].iter().zip(x).map(|(w, v)| w * v).sum())
                    .collect();
                (z, Vec::new())
            }
            PolicyArch::Mlp { hidden } => {
                let (w1, rest) = self.params.split_at(hidden * d);
                let (b1, rest) = rest.split_at(hidden);
                let (w2, b2) = rest.split_at(a * hidden);
                let h: Vec<f64> = (0..hidden)
                    .map(|j| {
                        (w1[j * d..(j + 1) * d].iter().zip(x).map(|(w, v)| w * v).sum::<f64>() + b1[j]).tanh()
                    })
                    .collect();
                let z = (0..a)
                    .map(|k| w2[k * hidden..(k + 1) * hidden].iter().zip(&h).map(|(w, v)| w * v).sum::<f64>() + b2[k])
                    .collect();
                (z, h)
            }
        }
    }

    /// Unfloored log-probabilities.
    fn raw_log_probs(&self, x: &[f64]) -> Vec<f64> {
        let (z, _) = self.forward(x);
        let zt: Vec<f64> = z.iter().map(|v| v / self.temperature).collect();
        log_softmax(&zt)
    }

    pub fn probs(&self, x: &[f64]) -> Vec<f64> {
        self.raw_log_probs(x).into_iter().map(f64::exp).collect()
    }

    /// Log-probabilities with the [`PROB_FLOOR`] applied.
    pub fn log_probs(&self, x: &[f64]) -> Vec<f64> {
        let floor = PROB_FLOOR.ln();
        self.raw_log_probs(x).into_iter().map(|l| l.max(floor)).collect()
    }

    pub fn probs_obs(&self, obs: &Observation) -> Result<Vec<f64>, PolicyError> {
        Ok(self.probs(&self.features(obs)?))
    }

    pub fn greedy(&self, x: &[f64]) -> usize {
        let p = self.probs(x);
        let mut best = 0;
        for (i, v) in p.iter().enumerate() {
            if *v > p[best] {
                best = i;
            }
        }
        best
    }

    /// Gradient of `log pi(a | x)` with respect to the parameters.
    pub fn grad_log_prob(&self, x: &[f64], a: usize) -> Vec<f64> {
        let mut g = vec![0.0; self.params.len()];
        self.accumulate_grad_log_prob(x, a, 1.0, &mut g);
        g
    }

    /// `g += scale * d log pi(a | x) / d params`.
    pub fn accumulate_grad_log_prob(&self, x: &[f64], a: usize, scale: f64, g: &mut [f64]) {
        let d = self.input_dim();
        let n_a = self.n_actions();
        let (z, h) = self.forward(x);
        let zt: Vec<f64> = z.iter().map(|v| v / self.temperature).collect();
        let p: Vec<f64> = log_softmax(&zt).into_iter().map(f64::exp).collect();
        // d log p_a / d z_k
        let dz: Vec<f64> = (0..n_a)
            .map(|k| scale * ((if k == a { 1.0 } else { 0.0 }) - p[k]) / self.temperature)
            .collect();
        match self.arch {
            PolicyArch::Linear => {
                for k in 0..n_a {
                    if dz[k] == 0.0 {
                        continue;
                    }
                    for (gi, xi) in g[k * d..(k + 1) * d].iter_mut().zip(x) {
                        *gi += dz[k] * xi;
                    }
                }
            }
            PolicyArch::Mlp { hidden } => {
                let w2_off = hidden * d + hidden;
                let b2_off = w2_off + n_a * hidden;
                let mut dh = vec![0.0; hidden];
                for k in 0..n_a {
                    for j in 0..hidden {
                        g[w2_off + k * hidden + j] += dz[k] * h[j];
                        dh[j] += dz[k] * self.params[w2_off + k * hidden + j];
                    }
                    g[b2_off + k] += dz[k];
                }
                for j in 0..hidden {
                    let da = dh[j] * (1.0 - h[j] * h[j]);
                    for (i, xi) in x.iter().enumerate() {
                        g[j * d + i] += da * xi;
                    }
                    g[hidden * d + j] += da;
                }
            }
        }
    }

    pub fn is_finite(&self) -> bool {
        self.params.iter().all(|p| p.is_finite())
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| PolicyError::Io(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| PolicyError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PolicyError::Io(format!("{}: {e}", path.display())))?;
        let p: Policy = serde_json::from_str(&text)
            .map_err(|e| PolicyError::Io(format!("{}: {e}", path.display())))?;
        if p.format_version != POLICY_FORMAT_VERSION {
            return Err(PolicyError::Io(format!("unsupported policy format {}", p.format_version)));
        }
        if p.params.len() != Self::n_params(p.arch, p.input_dim(), p.n_actions()) {
            return Err(PolicyError::DimensionMismatch("parameter count does not match architecture".into()));
        }
        if p.input_mean.len() != p.input_scale.len()
            || !(p.input_mean.is_empty() || p.input_mean.len() == p.input_dim())
            || p.input_scale.iter().any(|s| !(*s > 0.0))
        {
            return Err(PolicyError::DimensionMismatch("input standardization does not match input size".into()));
        }
        Ok(p)
    }
}

/// Frozen reference policy with a note on where it came from.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferencePolicy {
    policy: Policy,
    pub provenance: String,
}

impl ReferencePolicy {
    pub fn new(policy: Policy, provenance: impl Into<String>) -> Self {
        Self {
            policy,
            provenance: provenance.into(),
        }
    }

    pub fn policy(&self) -> &Policy {
        &self.policy
    }

    pub fn save(&self, path: &Path) -> Result<(), PolicyError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| PolicyError::Io(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| PolicyError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| PolicyError::Io(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| PolicyError::Io(format!("{}: {e}", path.display())))
    }
}
