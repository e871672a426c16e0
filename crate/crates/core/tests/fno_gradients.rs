use oceanhpo_core::eval::{composite_loss, AccForm};
use oceanhpo_core::fno::activation::ALL_ACTIVATIONS;
use oceanhpo_core::fno::{backward, forward, init_params, predict, Activation, FnoConfig, PaddingType, ParamSet, Tensor4};
use oceanhpo_core::seed;
use rand::Rng;

const H: f64 = 1e-5;
/// Gradients smaller than this are compared in absolute terms.
const REL_FLOOR: f64 = 1e-4;

struct Problem {
    x: Tensor4,
    target: Tensor4,
    clim: Vec<f64>,
    mask: Vec<f64>,
    alpha: f64,
}

fn random(shape: [usize; 4], rng: &mut impl Rng) -> Tensor4 {
    Tensor4::from_vec(shape, (0..shape.iter().product()).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

fn problem(s: u64) -> Problem {
    let mut rng = seed::rng(s);
    let mask: Vec<f64> = (0..64)
        .map(|p| {
            let (i, j) = ((p / 8) as f64 - 3.5, (p % 8) as f64 - 3.5);
            if i * i + j * j <= 16.0 { 1.0 } else { 0.0 }
        })
        .collect();
    Problem {
        x: random([2, 5, 8, 8], &mut rng),
        target: random([2, 4, 8, 8], &mut rng),
        clim: random([1, 4, 8, 8], &mut rng).into_vec(),
        mask,
        alpha: rng.random_range(0.1..0.9),
    }
}

fn loss(cfg: &FnoConfig, params: &ParamSet, p: &Problem) -> f64 {
    let y = predict(cfg, params, &p.x).unwrap();
    composite_loss(&y, &p.target, &p.clim, &p.mask, p.alpha, AccForm::Pearson).unwrap().0.loss
}

fn signature(cfg: &FnoConfig, params: &ParamSet, p: &Problem) -> u64 {
    forward(cfg, params, &p.x).unwrap().1.region_signature()
}

/// Worst relative error and the number of entries skipped because the
/// finite-difference stencil crossed an activation kink.
fn check(cfg: &FnoConfig, s: u64) -> (f64, usize, usize) {
    let p = problem(s);
    let params = init_params(cfg, s);
    let (y, cache) = forward(cfg, &params, &p.x).unwrap();
    let (_, g) = composite_loss(&y, &p.target, &p.clim, &p.mask, p.alpha, AccForm::Pearson).unwrap();
    let grads = backward(cfg, &params, &cache, &g).unwrap();
    let sig = cache.region_signature();
    let (mut worst, mut skipped, mut total) = (0.0f64, 0, 0);
    for ti in 0..params.tensors.len() {
        for k in 0..params.tensors[ti].data.len() {
            total += 1;
            let mut q = params.clone();
            q.tensors[ti].data[k] += H;
            let up = loss(cfg, &q, &p);
            let sig_up = signature(cfg, &q, &p);
            q.tensors[ti].data[k] -= 2.0 * H;
            let down = loss(cfg, &q, &p);
            let sig_down = signature(cfg, &q, &p);
            if sig_up != sig || sig_down != sig {
                skipped += 1;
                continue;
            }
            let fd = (up - down) / (2.0 * H);
            let an = grads.tensors[ti].data[k];
            let err = (fd - an).abs() / fd.abs().max(an.abs()).max(REL_FLOOR);
            if err > worst {
                worst = err;
            }
        }
    }
    (worst, skipped, total)
}

fn tiny(lift: Activation, proj: Activation) -> FnoConfig {
    FnoConfig {
        in_channels: 5,
        out_channels: 4,
        padding: false,
        padding_type: PaddingType::Constant,
        pad_width: 3,
        coord_feat: false,
        lift_act: lift,
        block_act: Activation::Gelu,
        proj_act: proj,
        num_fno: 2,
        num_latent_feat: 4,
        num_modes: 2,
        num_proj_layers: 2,
        proj_size: 3,
    }
}

#[test]
fn gradients_match_finite_differences_for_every_activation() {
    let pads = [None, Some(PaddingType::Constant), Some(PaddingType::Reflect), Some(PaddingType::Replicate), Some(PaddingType::Circular)];
    for (i, &act) in ALL_ACTIVATIONS.iter().enumerate() {
        let mut cfg = tiny(act, ALL_ACTIVATIONS[(i + 5) % ALL_ACTIVATIONS.len()]);
        if let Some(ty) = pads[i % pads.len()] {
            cfg.padding = true;
            cfg.padding_type = ty;
        }
        cfg.coord_feat = i % 2 == 1;
        let (worst, skipped, total) = check(&cfg, 100 + i as u64);
        eprintln!("{act:?}: worst {worst:.2e}, skipped {skipped}/{total}");
        assert!(worst < 1e-5, "{act:?}: max relative error {worst}");
        assert!(skipped * 20 <= total, "{act:?}: skipped {skipped} of {total}");
    }
}

#[test]
fn zero_loss_gives_zero_gradients() {
    let cfg = tiny(Activation::Tanh, Activation::Silu);
    let p = problem(1);
    let params = init_params(&cfg, 1);
    let (y, cache) = forward(&cfg, &params, &p.x).unwrap();
    let (b, g) = composite_loss(&y, &y, &p.clim, &p.mask, 1.0, AccForm::Pearson).unwrap();
    assert_eq!(b.loss, 0.0);
    let grads = backward(&cfg, &params, &cache, &g).unwrap();
    assert!(grads.tensors.iter().all(|t| t.data.iter().all(|&v| v == 0.0)));
}

#[test]
fn gradients_scale_linearly() {
    let cfg = tiny(Activation::Prelu, Activation::Elu);
    let p = problem(2);
    let params = init_params(&cfg, 2);
    let (y, cache) = forward(&cfg, &params, &p.x).unwrap();
    let (_, g) = composite_loss(&y, &p.target, &p.clim, &p.mask, 0.5, AccForm::Pearson).unwrap();
    let mut g2 = g.clone();
    g2.data_mut().iter_mut().for_each(|v| *v *= 2.0);
    let a = backward(&cfg, &params, &cache, &g).unwrap();
    let b = backward(&cfg, &params, &cache, &g2).unwrap();
    for (ta, tb) in a.tensors.iter().zip(&b.tensors) {
        for (x, y) in ta.data.iter().zip(&tb.data) {
            assert_eq!(2.0 * x, *y);
        }
    }
}

#[test]
fn parameters_transfer_across_resolutions() {
    let mut cfg = tiny(Activation::Gelu, Activation::Gelu);
    cfg.num_modes = 4;
    cfg.padding = true;
    cfg.padding_type = PaddingType::Reflect;
    cfg.coord_feat = true;
    let params = init_params(&cfg, 3);
    let mut rng = seed::rng(4);
    for n in [32, 64] {
        let y = predict(&cfg, &params, &random([1, 5, n, n], &mut rng)).unwrap();
        assert_eq!(y.shape(), [1, 4, n, n]);
        assert!(y.is_finite());
    }
}

#[test]
fn forward_output_is_reproducible() {
    let cfg = tiny(Activation::Gelu, Activation::Silu);
    let p = problem(9);
    let a = predict(&cfg, &init_params(&cfg, 11), &p.x).unwrap();
    let b = predict(&cfg, &init_params(&cfg, 11), &p.x).unwrap();
    let bits = |t: &Tensor4| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&a), bits(&b));
}
