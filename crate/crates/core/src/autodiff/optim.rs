use super::{AutodiffError, Result, Tensor};

/// Adam hyperparameters. The defaults use `beta1 = 0.7`, `beta2 = 0.8`, the
/// low-momentum setting used for fine-tuning recurrent language models.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 3e-3,
            beta1: 0.7,
            beta2: 0.8,
            epsilon: 1e-8,
        }
    }
}

/// Per-parameter Adam moments plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
    pub step_count: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub learning_rate: f64,
}

impl AdamState {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|p| vec![0.0; p.numel()]).collect();
        Self {
            first_moment: zeros.clone(),
            second_moment: zeros,
            step_count: 0,
            beta1: config.beta1,
            beta2: config.beta2,
            epsilon: config.epsilon,
            learning_rate: config.learning_rate,
        }
    }

    pub fn config(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }

    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        adam_step(params, self)
    }
}

/// One bias-corrected Adam update using each parameter's accumulated
/// gradient (absent gradients count as zero). Gradients are cleared
/// afterwards. A non-finite gradient aborts the step before anything is
/// modified.
pub fn adam_step(params: &mut [&mut Tensor], state: &mut AdamState) -> Result<()> {
    if params.len() != state.first_moment.len() {
        return Err(AutodiffError::ShapeMismatch {
            op: "adam_step",
            left: vec![params.len()],
            right: vec![state.first_moment.len()],
        });
    }
    for (i, p) in params.iter().enumerate() {
        if p.numel() != state.first_moment[i].len() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: vec![state.first_moment[i].len()],
            });
        }
        if p.grad().is_some_and(|g| g.iter().any(|x| !x.is_finite())) {
            return Err(AutodiffError::NonFiniteGradient(i));
        }
    }
    state.step_count += 1;
    let t = state.step_count as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for (i, p) in params.iter_mut().enumerate() {
        let grad = p.grad().map(<[f64]>::to_vec);
        let m = &mut state.first_moment[i];
        let v = &mut state.second_moment[i];
        let data = p.data_mut();
        for j in 0..data.len() {
            let g = grad.as_ref().map_or(0.0, |g| g[j]);
            m[j] = b1 * m[j] + (1.0 - b1) * g;
            v[j] = b2 * v[j] + (1.0 - b2) * g * g;
            let mhat = m[j] / c1;
            let vhat = v[j] / c2;
            data[j] -= state.learning_rate * mhat / (vhat.sqrt() + state.epsilon);
        }
        p.zero_grad();
    }
    Ok(())
}

/// Rescales gradients so their global L2 norm is at most `max_norm`. Returns
/// the norm before clipping.
pub fn clip_grad_norm(params: &mut [&mut Tensor], max_norm: f64) -> f64 {
    let total: f64 = params
        .iter()
        .filter_map(|p| p.grad())
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if total > max_norm && total > 0.0 {
        let s = max_norm / total;
        for p in params.iter_mut() {
            if let Some(g) = p.grad_mut() {
                g.iter_mut().for_each(|x| *x *= s);
            }
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f64) -> Tensor {
        Tensor::parameter(vec![1], vec![v]).unwrap()
    }

    #[test]
    fn defaults_match_low_momentum_setting() {
        let c = AdamConfig::default();
        assert_eq!((c.beta1, c.beta2, c.epsilon), (0.7, 0.8, 1e-8));
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = Tensor::parameter(vec![3], vec![0.5, -1.0, 2.0]).unwrap();
        let before = p.clone();
        let mut st = AdamState::new(AdamConfig::default(), &[&p]);
        for _ in 0..5 {
            p.accumulate_grad(&[0.0; 3]).unwrap();
            adam_step(&mut [&mut p], &mut st).unwrap();
        }
        assert_eq!(p.data(), before.data());
        assert_eq!(st.step_count, 5);
    }

    #[test]
    fn constant_gradient_moves_by_learning_rate_each_step() {
        // Brute-force iteration of the raw recurrences, independent of
        // adam_step, against the closed form: with a fixed gradient g,
        // mhat = g and vhat = g^2 exactly, so each step is lr * g / (|g| + eps).
        let (lr, g) = (0.01, 2.5);
        let cfg = AdamConfig {
            learning_rate: lr,
            ..AdamConfig::default()
        };
        let mut p = scalar_param(1.0);
        let mut st = AdamState::new(cfg, &[&p]);
        let (mut m, mut v, mut x) = (0.0f64, 0.0f64, 1.0f64);
        let mut prev = p.data()[0];
        for t in 1..=200 {
            p.accumulate_grad(&[g]).unwrap();
            adam_step(&mut [&mut p], &mut st).unwrap();
            m = 0.7 * m + 0.3 * g;
            v = 0.8 * v + 0.2 * g * g;
            x -= lr * (m / (1.0 - 0.7f64.powi(t))) / ((v / (1.0 - 0.8f64.powi(t))).sqrt() + 1e-8);
            let now = p.data()[0];
            assert!(now < prev, "must move against the gradient sign");
            assert!(((prev - now) - lr * g / (g + 1e-8)).abs() < 1e-12);
            assert!((now - x).abs() < 1e-12);
            prev = now;
        }
    }

    #[test]
    fn nan_gradient_aborts_without_mutation() {
        let mut p = scalar_param(1.0);
        let mut st = AdamState::new(AdamConfig::default(), &[&p]);
        p.accumulate_grad(&[f64::NAN]).unwrap();
        assert_eq!(adam_step(&mut [&mut p], &mut st).unwrap_err(), AutodiffError::NonFiniteGradient(0));
        assert_eq!(p.data(), &[1.0]);
        assert_eq!(st.step_count, 0);
    }

    #[test]
    fn deterministic_given_same_inputs() {
        let run = || {
            let mut p = Tensor::parameter(vec![2], vec![0.3, -0.2]).unwrap();
            let mut st = AdamState::new(AdamConfig::default(), &[&p]);
            for k in 0..10 {
                p.accumulate_grad(&[0.1 * k as f64, -0.05]).unwrap();
                adam_step(&mut [&mut p], &mut st).unwrap();
            }
            (p, st)
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clipping_bounds_global_norm() {
        let mut a = scalar_param(0.0);
        let mut b = scalar_param(0.0);
        a.accumulate_grad(&[3.0]).unwrap();
        b.accumulate_grad(&[4.0]).unwrap();
        let norm = clip_grad_norm(&mut [&mut a, &mut b], 1.0);
        assert_eq!(norm, 5.0);
        assert!((a.grad().unwrap()[0] - 0.6).abs() < 1e-15);
        assert!((b.grad().unwrap()[0] - 0.8).abs() < 1e-15);
    }
}
