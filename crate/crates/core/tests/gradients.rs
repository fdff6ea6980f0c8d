use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sparse_nerf::autodiff::gradcheck::{check_inputs, check_params, STEP};
use sparse_nerf::autodiff::{Axis, Graph, Reduce, Tensor, Var};
use sparse_nerf::encoding::{mask_at, EncodingConfig};
use sparse_nerf::field::{Field, FieldConfig, FieldVariant, Normalization};
use sparse_nerf::losses;
use sparse_nerf::renderer::{render_batch, SamplingConfig};
use sparse_nerf::scene::{generate_rays, Camera};

const TRIALS: u64 = 100;
const TOL: f64 = 1e-3;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(rows, cols, |_, _| rng.random_range(lo..hi))
}

fn check_all(name: &str, mut make: impl FnMut(&mut ChaCha8Rng) -> f64) {
    let mut worst = 0.0f64;
    for trial in 0..TRIALS {
        let mut rng = ChaCha8Rng::seed_from_u64(trial);
        let e = make(&mut rng);
        assert!(e < TOL, "{name}: trial {trial} relative error {e:e}");
        worst = worst.max(e);
    }
    eprintln!("{name}: worst relative error {worst:e}");
}

#[test]
fn elementwise_primitives() {
    type Unary = fn(&mut Graph<f64>, Var) -> sparse_nerf::Result<Var>;
    let ops: [(&str, Unary, f64, f64); 9] = [
        ("sin", |g, a| g.sin(a), -3.0, 3.0),
        ("cos", |g, a| g.cos(a), -3.0, 3.0),
        ("exp", |g, a| g.exp(a), -2.0, 2.0),
        ("log", |g, a| g.log(a), 0.2, 3.0),
        ("sigmoid", |g, a| g.sigmoid(a), -4.0, 4.0),
        ("softplus", |g, a| g.softplus(a), -4.0, 4.0),
        ("square", |g, a| g.square(a), -2.0, 2.0),
        ("sqrt", |g, a| g.sqrt(a), 0.2, 3.0),
        ("abs", |g, a| g.abs(a), 0.1, 2.0),
    ];
    for (name, op, lo, hi) in ops {
        check_all(name, |rng| {
            let x = random(rng, 3, 4, lo, hi);
            let w = random(rng, 3, 4, -1.0, 1.0);
            check_inputs(
                &[x, w],
                |g, v| {
                    let y = op(g, v[0])?;
                    let yw = g.mul(y, v[1])?;
                    g.sum(yw, Reduce::All)
                },
                STEP,
            )
            .unwrap()
        });
    }
}

#[test]
fn structural_primitives() {
    check_all("matmul+broadcast", |rng| {
        let a = random(rng, 4, 3, -1.0, 1.0);
        let b = random(rng, 3, 5, -1.0, 1.0);
        let bias = random(rng, 1, 5, -1.0, 1.0);
        check_inputs(
            &[a, b, bias],
            |g, v| {
                let m = g.matmul(v[0], v[1])?;
                let m = g.add(m, v[2])?;
                let s = g.sigmoid(m)?;
                g.mean(s, Reduce::All)
            },
            STEP,
        )
        .unwrap()
    });
    check_all("concat+slice+reshape", |rng| {
        let a = random(rng, 3, 2, -1.0, 1.0);
        let b = random(rng, 3, 4, -1.0, 1.0);
        check_inputs(
            &[a, b],
            |g, v| {
                let c = g.concat(&[v[0], v[1]], Axis::Cols)?;
                let s = g.slice(c, Axis::Cols, 1, 4)?;
                let r = g.reshape(s, 4, 3)?;
                let rows = g.sum(r, Reduce::Rows)?;
                let sq = g.square(rows)?;
                g.sum(sq, Reduce::Cols)
            },
            STEP,
        )
        .unwrap()
    });
    check_all("div+max+min", |rng| {
        let a = random(rng, 2, 3, -1.0, 1.0);
        let b = random(rng, 2, 3, 0.5, 2.0);
        check_inputs(
            &[a, b],
            |g, v| {
                let d = g.div(v[0], v[1])?;
                let hi = g.max(d, v[0])?;
                let lo = g.min(hi, v[1])?;
                let sq = g.square(lo)?;
                g.sum(sq, Reduce::All)
            },
            STEP,
        )
        .unwrap()
    });
}

#[test]
fn photometric_loss() {
    check_all("photometric", |rng| {
        let c = random(rng, 6, 3, 0.0, 1.0);
        let f = random(rng, 6, 3, 0.0, 1.0);
        let t = random(rng, 6, 3, 0.0, 1.0);
        check_inputs(
            &[c, f, t],
            |g, v| losses::photometric(g, v[0], Some(v[1]), v[2], false),
            STEP,
        )
        .unwrap()
    });
}

#[test]
fn occlusion_loss() {
    check_all("occlusion", |rng| {
        let s = random(rng, 5, 12, 0.0, 3.0);
        let m = rng.random_range(1..=12);
        check_inputs(&[s], |g, v| losses::occlusion(g, v[0], m), STEP).unwrap()
    });
}

#[test]
fn depth_tv_loss() {
    check_all("depth_tv", |rng| {
        let d = random(rng, 5, 6, 1.0, 4.0);
        let valid: Vec<bool> = (0..30).map(|_| rng.random_bool(0.8)).collect();
        check_inputs(&[d], |g, v| losses::depth_tv(g, v[0], Some(&valid)), STEP).unwrap()
    });
}

#[test]
fn depth_rank_loss() {
    check_all("depth_rank", |rng| {
        let d = random(rng, 16, 1, 1.0, 4.0);
        let prior: Vec<f64> = (0..16).map(|_| rng.random_range(1.0..4.0)).collect();
        let pairs = losses::rank_pairs(&prior, &[true; 16], 24, rng);
        check_inputs(&[d], |g, v| losses::depth_rank(g, v[0], &pairs, 1e-4), STEP).unwrap()
    });
}

#[test]
fn depth_continuity_loss() {
    check_all("depth_continuity", |rng| {
        let prior: Vec<f64> = (0..16).map(|_| rng.random_range(1.0..4.0)).collect();
        let pairs = losses::knn_pairs(&prior, &[true; 16], 4, 4, 3, 2);
        // The hinge is not differentiable where |d_i - d_j| is 0 or the
        // threshold, so draws near those points are redrawn.
        let d = loop {
            let d = random(rng, 16, 1, 1.0, 2.0);
            let clear = pairs.iter().all(|&(i, j)| {
                let x = (d.get(i, 0) - d.get(j, 0)).abs();
                x > 100.0 * STEP && (x - 0.05).abs() > 100.0 * STEP
            });
            if clear {
                break d;
            }
        };
        check_inputs(&[d], |g, v| losses::depth_continuity(g, v[0], &pairs, 0.05), STEP).unwrap()
    });
}

#[test]
fn feature_loss() {
    check_all("feature", |rng| {
        let f = random(rng, 5, 12, -1.0, 1.0);
        let t = random(rng, 5, 12, -1.0, 1.0);
        check_inputs(&[f, t], |g, v| losses::feature(g, v[0], v[1]), STEP).unwrap()
    });
}

fn small_field(rng: &mut ChaCha8Rng, seed: u64, variant: FieldVariant) -> Field<f64> {
    let cfg = FieldConfig {
        width: 8,
        depth: 3,
        bottleneck: 8,
        feature_dim: 4,
        skip_layer: 2,
        variant,
    };
    let enc = EncodingConfig {
        bands: 4,
        dir_bands: 2,
        anneal_steps: 100,
        ..EncodingConfig::default()
    };
    let mut field = Field::new(cfg, enc, seed).unwrap().with_normalization(Normalization {
        center: [0.0; 3],
        scale: 1.0,
    });
    // Zero-initialised biases put ReLU inputs exactly on the kink whenever
    // a whole layer is inactive, so the check runs at a perturbed point.
    for i in 0..field.params.flat_len() {
        let v = field.params.get_flat(i) + rng.random_range(-0.05..0.05);
        field.params.set_flat(i, v);
    }
    field
}

#[test]
fn field_and_renderer_composition() {
    let camera = Camera::look_at([0.0, -3.0, 0.5], [0.0; 3], 8, 8, 40.0);
    let sampling = SamplingConfig {
        n_coarse: 12,
        n_fine: 8,
        jitter: true,
        seed: 3,
    };
    check_all("field+renderer", |rng| {
        let seed = rng.random();
        let variant = if rng.random_bool(0.5) { FieldVariant::FeatureConditioned } else { FieldVariant::Plain };
        let coarse = small_field(rng, seed, variant);
        let fine = small_field(rng, seed ^ 1, variant);
        let pixels: Vec<(usize, usize)> = (0..4).map(|_| (rng.random_range(0..8), rng.random_range(0..8))).collect();
        let rays = generate_rays(&camera, &pixels, 0).unwrap();
        let target = random(rng, 4, 3, 0.0, 1.0);
        let feat_target = random(rng, 4, 4, -1.0, 1.0);
        let step = rng.random_range(0..150);
        let mask = mask_at(step, &coarse.encoding);
        let loss = |g: &mut Graph<f64>, c: &Field<f64>, f: &Field<f64>| -> sparse_nerf::Result<Var> {
            let b = render_batch(g, c, Some(f), &rays, &sampling, [1.0; 3], Some(&mask), step)?;
            let t = g.constant(target.clone());
            let mut l = losses::photometric(g, b.coarse.colour, b.fine.as_ref().map(|p| p.colour), t, true)?;
            let occ = losses::occlusion(g, b.coarse.sigma, 4)?;
            l = g.add(l, occ)?;
            let fine = b.fine.as_ref().expect("fine pass");
            let depth = g.sum(fine.depth, Reduce::All)?;
            let depth = g.scale(depth, 0.1)?;
            l = g.add(l, depth)?;
            if let Some(feat) = fine.feature {
                let ft = g.constant(feat_target.clone());
                let lf = losses::feature(g, feat, ft)?;
                l = g.add(l, lf)?;
            }
            Ok(l)
        };
        // Coarse parameters also steer the hierarchical samples, which are
        // detached by design, so they are checked with the fine pass
        // reusing the coarse samples.
        let shared = SamplingConfig { n_fine: 0, ..sampling };
        let n_c = coarse.params.flat_len();
        let coords_c: Vec<usize> = (0..6).map(|_| rng.random_range(0..n_c)).collect();
        let e_c = check_params(
            &coarse.params,
            &coords_c,
            |g, p| {
                let mut c = coarse.clone();
                c.params = p.clone();
                let b = render_batch(g, &c, Some(&fine), &rays, &shared, [1.0; 3], Some(&mask), step)?;
                let t = g.constant(target.clone());
                let l = losses::photometric(g, b.coarse.colour, b.fine.as_ref().map(|p| p.colour), t, true)?;
                let occ = losses::occlusion(g, b.coarse.sigma, 4)?;
                g.add(l, occ)
            },
            STEP,
        )
        .unwrap();
        let n_f = fine.params.flat_len();
        let coords_f: Vec<usize> = (0..6).map(|_| rng.random_range(0..n_f)).collect();
        let e_f = check_params(
            &fine.params,
            &coords_f,
            |g, p| {
                let mut f = fine.clone();
                f.params = p.clone();
                loss(g, &coarse, &f)
            },
            STEP,
        )
        .unwrap();
        e_c.max(e_f)
    });
}

