use interdiff_core::denoiser::{Denoiser, DenoiserConfig};
use interdiff_core::sampling::{sample_pairs, JointPredictor, SamplerConfig, SamplerKind};
use interdiff_core::schedule::{GuidanceConfig, NoiseSchedule};
use interdiff_core::{Matrix, Result};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const RUNS: usize = 1000;

fn schedule() -> NoiseSchedule {
    NoiseSchedule::linear(50, 2e-3, 0.4).unwrap()
}

fn config(kind: SamplerKind, scale: f64) -> SamplerConfig {
    SamplerConfig {
        kind,
        guidance: GuidanceConfig::new(scale).unwrap(),
    }
}

/// Answers with the true clean pair whatever the input.
struct Oracle([Matrix; 2]);

impl JointPredictor for Oracle {
    fn predict(&self, _: usize, x: &[[Matrix; 2]], _: &[Matrix]) -> Result<Vec<[Matrix; 2]>> {
        Ok(vec![self.0.clone(); x.len()])
    }
}

/// Exact posterior mean E[x₀ | x_t] for scalar data x₀ ~ N(m, v).
struct GaussianPosterior<'a> {
    schedule: &'a NoiseSchedule,
    mean: f64,
    var: f64,
}

impl JointPredictor for GaussianPosterior<'_> {
    fn predict(&self, t: usize, x: &[[Matrix; 2]], _: &[Matrix]) -> Result<Vec<[Matrix; 2]>> {
        let ab = self.schedule.alpha_bar(t);
        let gain = ab.sqrt() * self.var / (ab * self.var + 1.0 - ab);
        let f = |m: &Matrix| m.map(|v| self.mean + gain * (v - ab.sqrt() * self.mean));
        Ok(x.iter().map(|[s, l]| [f(s), f(l)]).collect())
    }
}

fn moments(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    (mean, v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0))
}

#[test]
fn ground_truth_predictor_recovers_the_clean_pair() {
    let truth = [
        Matrix::row_vector(&[0.4, -1.1, 2.0]),
        Matrix::row_vector(&[-0.3, 0.0, 0.9]),
    ];
    let cond = vec![Matrix::zeros(1, 2); RUNS];
    for kind in [SamplerKind::Ddpm, SamplerKind::Ddim { steps: 10, eta: 0.0 }, SamplerKind::Ddim { steps: 25, eta: 1.0 }] {
        for scale in [0.0, 2.5] {
            let mut rng = ChaCha8Rng::seed_from_u64(3);
            let out = sample_pairs(&Oracle(truth.clone()), &schedule(), &cond, 3, &config(kind, scale), &mut rng).unwrap();
            for r in 0..2 {
                for c in 0..3 {
                    let values: Vec<f64> = out.iter().map(|p| p[r].get(0, c)).collect();
                    let (mean, var) = moments(&values);
                    let se = (var / RUNS as f64).sqrt();
                    let err = (mean - truth[r].get(0, c)).abs();
                    assert!(err <= (3.0 * se).max(1e-12), "{kind:?} s={scale}: {err} vs se {se}");
                }
            }
        }
    }
}

#[test]
fn exact_gaussian_posterior_follows_the_linear_recursion() {
    let s = schedule();
    let (mean, var) = (0.8, 0.25);
    let predictor = GaussianPosterior { schedule: &s, mean, var };
    let cond = vec![Matrix::zeros(1, 1); 20_000];
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let out = sample_pairs(&predictor, &s, &cond, 1, &config(SamplerKind::Ddpm, 0.0), &mut rng).unwrap();
    // each step is x ← a·x + b + σ·z, so the final moments follow exactly
    let (mut m_exact, mut v_exact) = (0.0, 1.0);
    for t in (0..s.timesteps()).rev() {
        let ab = s.alpha_bar(t);
        let gain = ab.sqrt() * var / (ab * var + 1.0 - ab);
        let (cx0, cxt) = s.posterior_mean_coefs(t);
        let a = cx0 * gain + cxt;
        m_exact = a * m_exact + cx0 * mean * (1.0 - gain * ab.sqrt());
        v_exact = a * a * v_exact + if t > 0 { s.posterior_variance(t) } else { 0.0 };
    }
    // x_T ~ N(0, 1) ignores the residual m·√ᾱ_T
    assert!((m_exact - mean).abs() < 1e-4, "{m_exact}");
    for r in 0..2 {
        let values: Vec<f64> = out.iter().map(|p| p[r].get(0, 0)).collect();
        let (m, v) = moments(&values);
        let n = values.len() as f64;
        assert!((m - m_exact).abs() < 4.0 * (v_exact / n).sqrt(), "role {r}: mean {m}");
        assert!((v - v_exact).abs() < 4.0 * v_exact * (2.0 / n).sqrt(), "role {r}: variance {v} vs {v_exact}");
    }
}

#[test]
fn sampling_a_model_is_reproducible_per_seed() {
    let cfg = DenoiserConfig {
        motion_dim: 4,
        cond_dim: 2,
        width: 8,
        heads: 2,
        role_dim: 2,
        cla_window: 2,
        ffn_hidden: 8,
        timesteps: 50,
        ..DenoiserConfig::default()
    };
    let model = Denoiser::init(cfg, 1).unwrap();
    let cond = vec![Matrix::randn(6, 2, &mut ChaCha8Rng::seed_from_u64(2)); 2];
    let run = |kind, seed| {
        sample_pairs(&model, &schedule(), &cond, 4, &config(kind, 2.5), &mut ChaCha8Rng::seed_from_u64(seed)).unwrap()
    };
    let ddim = SamplerKind::Ddim { steps: 10, eta: 0.0 };
    assert_eq!(run(ddim, 4), run(ddim, 4));
    assert_eq!(run(SamplerKind::Ddpm, 4), run(SamplerKind::Ddpm, 4));
    assert_ne!(run(SamplerKind::Ddpm, 4), run(SamplerKind::Ddpm, 5));
    assert!(run(ddim, 4).iter().flatten().all(|m| m.is_finite()));
}
