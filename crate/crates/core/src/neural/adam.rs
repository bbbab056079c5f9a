use super::TrainConfig;

/// First and second moment estimates, one entry per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Moments {
    pub first: Vec<f64>,
    pub second: Vec<f64>,
}

impl Moments {
    pub fn zeros(len: usize) -> Self {
        Self {
            first: vec![0.0; len],
            second: vec![0.0; len],
        }
    }
}

/// One bias-corrected Adam update at step `t` (1-based).
pub fn adam_step(params: &mut [f64], grads: &[f64], moments: &mut Moments, t: u64, cfg: &TrainConfig) {
    assert!(t >= 1, "Adam step counter starts at 1");
    assert_eq!(params.len(), grads.len());
    assert_eq!(params.len(), moments.first.len());
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for (((p, g), m), v) in params
        .iter_mut()
        .zip(grads)
        .zip(moments.first.iter_mut())
        .zip(moments.second.iter_mut())
    {
        *m = b1 * *m + (1.0 - b1) * g;
        *v = b2 * *v + (1.0 - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_and_decays_moments() {
        let cfg = TrainConfig::default();
        let mut p = vec![1.0, -2.0];
        let mut m = Moments {
            first: vec![0.5, 0.5],
            second: vec![0.25, 0.25],
        };
        adam_step(&mut p, &[0.0, 0.0], &mut m, 5, &cfg);
        assert_ne!(p, vec![1.0, -2.0], "nonzero moments still move parameters");
        let mut p = vec![1.0, -2.0];
        let mut m0 = Moments::zeros(2);
        adam_step(&mut p, &[0.0, 0.0], &mut m0, 1, &cfg);
        assert_eq!(p, vec![1.0, -2.0]);
        assert_eq!(m.first, vec![0.5 * cfg.beta1; 2]);
        assert_eq!(m.second, vec![0.25 * cfg.beta2; 2]);
    }

    #[test]
    fn first_step_is_normalized_gradient() {
        let cfg = TrainConfig::default();
        for g in [3.0, -0.002, 1e4] {
            let mut p = vec![0.0];
            let mut m = Moments::zeros(1);
            adam_step(&mut p, &[g], &mut m, 1, &cfg);
            let want = -cfg.learning_rate * g / (g.abs() + cfg.epsilon);
            assert!((p[0] - want).abs() < 1e-15, "{} vs {}", p[0], want);
        }
    }

    /// Independent transcription of the textbook update.
    fn reference(p: f64, g: f64, m: f64, v: f64, t: i32, lr: f64) -> (f64, f64, f64) {
        let m = 0.9 * m + (1.0 - 0.9) * g;
        let v = 0.999 * v + (1.0 - 0.999) * g * g;
        let mh = m / (1.0 - 0.9f64.powi(t));
        let vh = v / (1.0 - 0.999f64.powi(t));
        (p - lr * mh / (vh.sqrt() + 1e-8), m, v)
    }

    #[test]
    fn two_steps_match_reference_bit_for_bit() {
        let cfg = TrainConfig::default();
        let mut p = vec![0.7];
        let mut mom = Moments::zeros(1);
        adam_step(&mut p, &[0.4], &mut mom, 1, &cfg);
        adam_step(&mut p, &[-1.3], &mut mom, 2, &cfg);
        let (r, m, v) = reference(0.7, 0.4, 0.0, 0.0, 1, 0.01);
        let (r, _, _) = reference(r, -1.3, m, v, 2, 0.01);
        assert_eq!(p[0], r);
    }
}
