use std::collections::BTreeMap;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{EpisodeSegment, FeatureMap, PreferenceLabel, PreferencePair, RewardError};
use crate::sim::{Action, Observation};

pub const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum RewardArch {
    Linear,
    /// One tanh hidden layer: `r = w2 . tanh(W1 phi + b1)`.
    Mlp { hidden: usize },
}

impl RewardArch {
    pub fn n_params(self, dim: usize) -> usize {
        match self {
            RewardArch::Linear => dim,
            RewardArch::Mlp { hidden } => hidden * dim + 2 * hidden,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardModel {
    pub format_version: u32,
    pub feature_hash: String,
    pub feature_map: FeatureMap,
    pub arch: RewardArch,
    pub theta: Vec<f64>,
    /// Training loss at the end of fitting; absent for untrained models.
    pub final_loss: Option<f64>,
}

/// `r(phi)` and, when `grad` is given, accumulates `d r / d theta` into it.
fn eval_phi(arch: RewardArch, theta: &[f64], phi: &[f64], grad: Option<&mut [f64]>) -> f64 {
    match arch {
        RewardArch::Linear => {
            if let Some(g) = grad {
                for (gi, p) in g.iter_mut().zip(phi) {
                    *gi += p;
                }
            }
            theta.iter().zip(phi).map(|(t, p)| t * p).sum()
        }
        RewardArch::Mlp { hidden } => {
            let d = phi.len();
            let (w1, rest) = theta.split_at(hidden * d);
            let (b1, w2) = rest.split_at(hidden);
            let mut r = 0.0;
            let mut g = grad;
            for j in 0..hidden {
                let z: f64 = w1[j * d..(j + 1) * d].iter().zip(phi).map(|(w, p)| w * p).sum::<f64>() + b1[j];
                let h = z.tanh();
                r += w2[j] * h;
                if let Some(g) = g.as_deref_mut() {
                    let dz = w2[j] * (1.0 - h * h);
                    for (k, p) in phi.iter().enumerate() {
                        g[j * d + k] += dz * p;
                    }
                    g[hidden * d + j] += dz;
                    g[hidden * d + hidden + j] += h;
                }
            }
            r
        }
    }
}

impl RewardModel {
    pub fn zeros(feature_map: FeatureMap, arch: RewardArch) -> Self {
        let n = arch.n_params(feature_map.dim());
        Self {
            format_version: MODEL_FORMAT_VERSION,
            feature_hash: feature_map.spec_hash(),
            feature_map,
            arch,
            theta: vec![0.0; n],
            final_loss: None,
        }
    }

    pub fn reward_phi(&self, phi: &[f64]) -> f64 {
        eval_phi(self.arch, &self.theta, phi, None)
    }

    pub fn reward_bin(&self, x: &Observation, bin: usize) -> Result<f64, RewardError> {
        let phi = self.feature_map.phi(x, bin)?;
        Ok(self.reward_phi(&phi))
    }

    /// `r_theta(x, y)` with `y` mapped to its nearest action bin.
    pub fn reward(&self, x: &Observation, y: &Action) -> Result<f64, RewardError> {
        self.reward_bin(x, self.feature_map.bins.bin_of(y))
    }

    /// Summed reward over a segment.
    pub fn segment_return(&self, seg: &EpisodeSegment) -> Result<f64, RewardError> {
        let mut total = 0.0;
        for (k, (x, y)) in seg.observations.iter().zip(&seg.actions).enumerate() {
            if self.feature_map.include_feedback && x.feedback.is_empty() {
                let mut x = x.clone();
                x.feedback = seg.features.get(k).map(|f| f.to_vec()).unwrap_or_default();
                total += self.reward(&x, y)?;
            } else {
                total += self.reward(x, y)?;
            }
        }
        Ok(total)
    }

    pub fn save(&self, path: &Path) -> Result<(), RewardError> {
        let text = serde_json::to_string_pretty(self).map_err(|e| RewardError::Io(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| RewardError::Io(format!("{}: {e}", path.display())))
    }

    pub fn load(path: &Path) -> Result<Self, RewardError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| RewardError::Io(format!("{}: {e}", path.display())))?;
        let m: RewardModel =
            serde_json::from_str(&text).map_err(|e| RewardError::Io(format!("{}: {e}", path.display())))?;
        if m.format_version != MODEL_FORMAT_VERSION {
            return Err(RewardError::Io(format!("unsupported model format {}", m.format_version)));
        }
        if m.feature_hash != m.feature_map.spec_hash() {
            return Err(RewardError::DimensionMismatch("feature map hash does not match".into()));
        }
        if m.theta.len() != m.arch.n_params(m.feature_map.dim()) {
            return Err(RewardError::DimensionMismatch("parameter count does not match".into()));
        }
        Ok(m)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub l2: f64,
    pub seed: u64,
    pub arch: RewardArch,
    /// Standardize core observation features over the training segments.
    pub normalize: bool,
}

impl Default for FitConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1.0,
            epochs: 500,
            l2: 1e-3,
            seed: 0,
            arch: RewardArch::Linear,
            normalize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitReport {
    pub loss_trace: Vec<f64>,
    pub final_loss: f64,
    pub pairs_used: usize,
    pub ties: usize,
}

/// Per-tick feature rows of both segments plus the label target.
#[derive(Clone, Debug)]
pub struct PairData {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub target: f64,
}

#[derive(Clone, Debug)]
pub struct PreferenceDataset {
    pub arch: RewardArch,
    pub dim: usize,
    pub pairs: Vec<PairData>,
    /// Segment feature sums for the linear case.
    sums: Vec<(Vec<f64>, Vec<f64>)>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

impl PreferenceDataset {
    pub fn new(arch: RewardArch, dim: usize, pairs: Vec<PairData>) -> Self {
        let sum = |rows: &Vec<Vec<f64>>| {
            let mut s = vec![0.0; dim];
            for r in rows {
                for (si, v) in s.iter_mut().zip(r) {
                    *si += v;
                }
            }
            s
        };
        let sums = pairs.iter().map(|p| (sum(&p.a), sum(&p.b))).collect();
        Self {
            arch,
            dim,
            pairs,
            sums,
        }
    }

    pub fn n_params(&self) -> usize {
        self.arch.n_params(self.dim)
    }

    /// Mean Bradley–Terry negative log-likelihood plus `l2 * |theta|^2`, with gradient.
    pub fn loss_and_grad(&self, theta: &[f64], l2: f64) -> (f64, Vec<f64>) {
        let n = self.n_params();
        let mut grad = vec![0.0; n];
        let mut loss = 0.0;
        let np = self.pairs.len().max(1) as f64;
        let mut ga = vec![0.0; n];
        let mut gb = vec![0.0; n];
        for (p, (sa, sb)) in self.pairs.iter().zip(&self.sums) {
            ga.iter_mut().for_each(|g| *g = 0.0);
            gb.iter_mut().for_each(|g| *g = 0.0);
            let (ra, rb) = match self.arch {
                RewardArch::Linear => (
                    eval_phi(self.arch, theta, sa, Some(&mut ga)),
                    eval_phi(self.arch, theta, sb, Some(&mut gb)),
                ),
                _ => (
                    p.a.iter().map(|r| eval_phi(self.arch, theta, r, Some(&mut ga))).sum(),
                    p.b.iter().map(|r| eval_phi(self.arch, theta, r, Some(&mut gb))).sum(),
                ),
            };
            let d = ra - rb;
            // -w log s(d) - (1-w) log s(-d)
            loss += p.target * softplus(-d) + (1.0 - p.target) * softplus(d);
            let coef = sigmoid(d) - p.target;
            for k in 0..n {
                grad[k] += coef * (ga[k] - gb[k]);
            }
        }
        loss /= np;
        grad.iter_mut().for_each(|g| *g /= np);
        loss += l2 * theta.iter().map(|t| t * t).sum::<f64>();
        for (g, t) in grad.iter_mut().zip(theta) {
            *g += 2.0 * l2 * t;
        }
        (loss, grad)
    }

    pub fn loss(&self, theta: &[f64], l2: f64) -> f64 {
        self.loss_and_grad(theta, l2).0
    }

    /// Gauss-Newton diagonal of the loss at `theta`, using the logistic
    /// curvature bound 1/4. Segment sums of dozens of ticks make the core
    /// directions far stiffer than the rare event counts; dividing by this
    /// evens out the step.
    pub fn curvature_diagonal(&self, theta: &[f64], l2: f64) -> Vec<f64> {
        let n = self.n_params();
        let np = self.pairs.len().max(1) as f64;
        let mut diag = vec![0.0; n];
        let mut ga = vec![0.0; n];
        let mut gb = vec![0.0; n];
        for (p, (sa, sb)) in self.pairs.iter().zip(&self.sums) {
            ga.iter_mut().for_each(|g| *g = 0.0);
            gb.iter_mut().for_each(|g| *g = 0.0);
            match self.arch {
                RewardArch::Linear => {
                    eval_phi(self.arch, theta, sa, Some(&mut ga));
                    eval_phi(self.arch, theta, sb, Some(&mut gb));
                }
                _ => {
                    p.a.iter().for_each(|r| {
                        eval_phi(self.arch, theta, r, Some(&mut ga));
                    });
                    p.b.iter().for_each(|r| {
                        eval_phi(self.arch, theta, r, Some(&mut gb));
                    });
                }
            }
            for k in 0..n {
                let d = ga[k] - gb[k];
                diag[k] += 0.25 * d * d / np;
            }
        }
        diag.iter().map(|d| d + 2.0 * l2 + 1e-8).collect()
    }
}

/// Builds the pair dataset, resolving segment ids.
pub fn build_dataset(
    pairs: &[PreferencePair],
    segments: &BTreeMap<String, &EpisodeSegment>,
    fmap: &FeatureMap,
    arch: RewardArch,
) -> Result<PreferenceDataset, RewardError> {
    let rows = |id: &str| -> Result<Vec<Vec<f64>>, RewardError> {
        let seg = segments
            .get(id)
            .ok_or_else(|| RewardError::DanglingSegment(id.to_string()))?;
        seg.observations
            .iter()
            .zip(&seg.actions)
            .enumerate()
            .map(|(k, (x, y))| {
                let mut x = x.clone();
                if fmap.include_feedback {
                    x.feedback = seg.features.get(k).map(|f| f.to_vec()).unwrap_or_default();
                }
                fmap.phi(&x, fmap.bins.bin_of(y))
            })
            .collect()
    };
    let mut data = Vec::with_capacity(pairs.len());
    for p in pairs {
        data.push(PairData {
            a: rows(&p.a)?,
            b: rows(&p.b)?,
            target: p.label.target(),
        });
    }
    Ok(PreferenceDataset::new(arch, fmap.dim(), data))
}

/// Fits a Bradley–Terry reward model by full-batch gradient descent along the
/// diagonally preconditioned gradient. Each epoch tries the configured step and
/// halves it until the loss does not increase, so the training loss is
/// non-increasing.
pub fn fit_reward(
    pairs: &[PreferencePair],
    segments: &[EpisodeSegment],
    mut fmap: FeatureMap,
    cfg: &FitConfig,
) -> Result<(RewardModel, FitReport), RewardError> {
    if !(cfg.learning_rate > 0.0 && cfg.l2 >= 0.0 && cfg.learning_rate.is_finite() && cfg.l2.is_finite()) {
        return Err(RewardError::InvalidConfig("learning rate must be > 0 and l2 >= 0".into()));
    }
    if let RewardArch::Mlp { hidden: 0 } = cfg.arch {
        return Err(RewardError::InvalidConfig("hidden width must be > 0".into()));
    }
    let ties = pairs.iter().filter(|p| p.label == PreferenceLabel::Tie).count();
    if ties == pairs.len() {
        return Err(RewardError::NoOrderingSignal);
    }
    let by_id: BTreeMap<String, &EpisodeSegment> =
        segments.iter().map(|s| (s.id.clone(), s)).collect();
    if cfg.normalize {
        let mut used: Vec<&EpisodeSegment> = Vec::new();
        let mut seen = std::collections::BTreeSet::new();
        for p in pairs {
            for id in [&p.a, &p.b] {
                if seen.insert(id.clone()) {
                    used.push(
                        by_id
                            .get(id.as_str())
                            .ok_or_else(|| RewardError::DanglingSegment(id.clone()))?,
                    );
                }
            }
        }
        fmap.fit_normalization(used.iter().flat_map(|s| s.observations.iter()));
    }
    let data = build_dataset(pairs, &by_id, &fmap, cfg.arch)?;
    let mut model = RewardModel::zeros(fmap, cfg.arch);
    if let RewardArch::Mlp { .. } = cfg.arch {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        let normal = Normal::new(0.0, 0.1).expect("valid sd");
        model.theta.iter_mut().for_each(|t| *t = normal.sample(&mut rng));
    }

    let (mut loss, mut grad) = data.loss_and_grad(&model.theta, cfg.l2);
    let mut diag = data.curvature_diagonal(&model.theta, cfg.l2);
    let mut trace = vec![loss];
    for epoch in 0..cfg.epochs {
        if epoch > 0 && epoch % 50 == 0 && !matches!(cfg.arch, RewardArch::Linear) {
            diag = data.curvature_diagonal(&model.theta, cfg.l2);
        }
        if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
            return Err(RewardError::NonFinite(format!("epoch {epoch}: loss {loss}")));
        }
        let mut lr = cfg.learning_rate;
        let mut accepted = None;
        for _ in 0..40 {
            let cand: Vec<f64> = model
                .theta
                .iter()
                .zip(&grad)
                .zip(&diag)
                .map(|((t, g), d)| t - lr * g / d)
                .collect();
            let (l, g) = data.loss_and_grad(&cand, cfg.l2);
            if l.is_finite() && l <= loss {
                accepted = Some((cand, l, g));
                break;
            }
            lr *= 0.5;
        }
        let Some((theta, l, g)) = accepted else { break };
        model.theta = theta;
        loss = l;
        grad = g;
        trace.push(loss);
    }
    model.final_loss = Some(loss);
    Ok((
        model,
        FitReport {
            loss_trace: trace,
            final_loss: loss,
            pairs_used: pairs.len(),
            ties,
        },
    ))
}
