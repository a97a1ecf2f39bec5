use interdiff_core::denoiser::{split_condition, Denoiser, DenoiserConfig};
use interdiff_core::motion::RoleLabel::{Listener, Speaker};
use interdiff_core::Matrix;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const FRAMES: usize = 8;

fn config() -> DenoiserConfig {
    DenoiserConfig {
        width: 16,
        heads: 2,
        cla_window: 3,
        ffn_hidden: 24,
        role_dim: 4,
        timesteps: 50,
        ..DenoiserConfig::default()
    }
}

fn randn(rows: usize, cols: usize, seed: u64) -> Matrix {
    Matrix::randn(rows, cols, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn inputs(cfg: &DenoiserConfig, seed: u64) -> (Matrix, Matrix, Matrix) {
    (
        randn(FRAMES, cfg.motion_dim, seed),
        randn(FRAMES, cfg.motion_dim, seed + 1),
        randn(FRAMES, cfg.cond_dim, seed + 2),
    )
}

#[test]
fn swapping_slots_swaps_the_outputs() {
    for cross_attention in [true, false] {
        let cfg = DenoiserConfig {
            cross_attention,
            ..config()
        };
        let model = Denoiser::init(cfg.clone(), 3).unwrap();
        let (xs, xl, c) = inputs(&cfg, 10);
        let (cs, cl) = split_condition(&c, cfg.lambda).unwrap();
        let (a, b) = model.denoise_split(&xs, &xl, &cs, &cl, [Speaker, Listener], 17).unwrap();
        let (b2, a2) = model.denoise_split(&xl, &xs, &cl, &cs, [Listener, Speaker], 17).unwrap();
        assert!(a.sub(&a2).unwrap().max_abs() < 1e-6);
        assert!(b.sub(&b2).unwrap().max_abs() < 1e-6);
    }
}

#[test]
fn full_weight_on_the_speaker_hides_the_condition_from_the_listener_branch() {
    let cfg = DenoiserConfig {
        lambda: 1.0,
        ..config()
    };
    let model = Denoiser::init(cfg.clone(), 4).unwrap();
    let (xs, xl, c) = inputs(&cfg, 20);
    let (zs, zl) = model.branch_latents(&xs, &xl, 9, &c).unwrap();
    let (zs2, zl2) = model.branch_latents(&xs, &xl, 9, &c.scale(-3.0)).unwrap();
    assert_eq!(zl, zl2);
    assert_ne!(zs, zs2);
}

#[test]
fn without_cross_paths_the_roles_are_isolated() {
    let cfg = DenoiserConfig {
        cross_attention: false,
        ..config()
    };
    let mut model = Denoiser::init(cfg.clone(), 5).unwrap();
    // fusion attention is the only other path between the slots
    for i in 0..cfg.fusion_layers {
        for p in ["w", "b"] {
            let name = format!("fusion.{i}.attn.o.{p}");
            let shape = model.params().get(&name).unwrap().shape();
            model.params_mut().set(&name, Matrix::zeros(shape.0, shape.1)).unwrap();
        }
    }
    let (xs, xl, c) = inputs(&cfg, 30);
    let (s1, _) = model.denoise(&xs, &xl, 12, &c).unwrap();
    let (s2, _) = model.denoise(&xs, &randn(FRAMES, cfg.motion_dim, 99), 12, &c).unwrap();
    assert_eq!(s1, s2);

    let with_cross = Denoiser::init(config(), 5).unwrap();
    let (s1, _) = with_cross.denoise(&xs, &xl, 12, &c).unwrap();
    let (s2, _) = with_cross.denoise(&xs, &randn(FRAMES, cfg.motion_dim, 99), 12, &c).unwrap();
    assert_ne!(s1, s2);
}

#[test]
fn condition_weight_changes_the_prediction() {
    let (xs, xl, c) = inputs(&config(), 40);
    let outputs: Vec<_> = [0.0, 0.5, 1.0]
        .iter()
        .map(|&lambda| {
            let model = Denoiser::init(DenoiserConfig { lambda, ..config() }, 6).unwrap();
            model.denoise(&xs, &xl, 20, &c).unwrap()
        })
        .collect();
    assert_ne!(outputs[0].0, outputs[1].0);
    assert_ne!(outputs[1].1, outputs[2].1);
}

#[test]
fn outputs_do_not_depend_on_batch_neighbours() {
    let cfg = config();
    let model = Denoiser::init(cfg.clone(), 7).unwrap();
    let (xs, xl, c) = inputs(&cfg, 50);
    let alone = model.denoise(&xs, &xl, 5, &c).unwrap();
    let (ys, yl, d) = inputs(&cfg, 60);
    let (cs, cl) = split_condition(&c, cfg.lambda).unwrap();
    let (ds, dl) = split_condition(&d, cfg.lambda).unwrap();
    use interdiff_core::denoiser::{DenoiseItem, RoleInput};
    let item = |x: &Matrix, y: &Matrix, a: &Matrix, b: &Matrix, t| DenoiseItem {
        slots: [
            RoleInput { x_t: x.clone(), cond: a.clone(), role: Speaker },
            RoleInput { x_t: y.clone(), cond: b.clone(), role: Listener },
        ],
        t,
    };
    let batch = model
        .denoise_batch(&[item(&ys, &yl, &ds, &dl, 30), item(&xs, &xl, &cs, &cl, 5)])
        .unwrap();
    assert!(batch[1][0].sub(&alone.0).unwrap().max_abs() < 1e-12);
    assert!(batch[1][1].sub(&alone.1).unwrap().max_abs() < 1e-12);
}

proptest! {
    #[test]
    fn condition_split_is_exactly_conservative(
        values in prop::collection::vec(-1e3f64..1e3, 1..32),
        lambda in 0.0f64..=1.0,
    ) {
        let c = Matrix::row_vector(&values);
        let (s, l) = split_condition(&c, lambda).unwrap();
        let sum = s.zip_map(&l, |a, b| a + b).unwrap();
        prop_assert_eq!(&sum, &c);
        for (x, v) in s.data().iter().zip(&values) {
            prop_assert!((x - lambda * v).abs() <= 4.0 * f64::EPSILON * v.abs());
        }
    }
}
