//! Behavioral tests for the reconstruction network: hand-computed cases,
//! structural invariants, and finite-difference gradient checks on small
//! instances.

use super::config::{DecoderKind, NetConfig};
use super::stage::{Mode, Neighborhoods, PointAttention, SemanticSubspace, StatUpdates};
use super::decoder::Decoder;
use super::ReconNet;
use crate::cloud::PointCloud;
use crate::img::Image;
use crate::nn::check::{fd_fn, finite_diff_check};
use crate::nn::{ParamSet, Tape, TapeParams, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;

fn tiny_config(decoder: DecoderKind) -> NetConfig {
    NetConfig {
        n_points: 8,
        img_size: 8,
        img_channels: 1,
        conv_channels: vec![4, 8],
        d_img: 16,
        stage_dims: [16, 8, 8],
        z_dim: 4,
        heads: 2,
        knn_k: 4,
        global_attn_threshold: 64,
        decoder,
        hidden: 16,
        sigma_floor: 1e-5,
        adain_momentum: 0.9,
    }
}

fn random_cloud(rng: &mut ChaCha12Rng, n: usize) -> PointCloud {
    PointCloud::new(
        (0..n)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect(),
    )
    .unwrap()
}

fn random_image(rng: &mut ChaCha12Rng, size: usize) -> Image {
    let mut img = Image::zeros(size, size, 1);
    for v in &mut img.data {
        *v = rng.random_range(0.0..1.0);
    }
    img
}

// ---- geometry module ---------------------------------------------------------

#[test]
fn geometry_modulation_shape_and_zero_weights() {
    let cfg = tiny_config(DecoderKind::SelfAttention);
    let mut ps = ParamSet::new();
    let net = ReconNet::build(&cfg, &mut ps, 0).unwrap();

    // Zeroing the geometry MLP weights must zero the modulation.
    for e in 0..ps.len() {
        if ps.entries()[e].name.starts_with("stage0.geom") {
            let z = Tensor::zeros(ps.get(e).shape());
            ps.set(e, z);
        }
    }
    let tape = Tape::new();
    let tp = TapeParams::register(&tape, &ps);
    let mut rng = ChaCha12Rng::seed_from_u64(1);
    let x = tape.leaf(Tensor::uniform(&[1, cfg.d_img], -1.0, 1.0, &mut rng));
    let feats = tape.leaf(Tensor::uniform(&[5, cfg.stage_dims[0]], -1.0, 1.0, &mut rng));
    let (gamma, beta) = net.stage(0).modulation(&tp, x, feats);
    assert_eq!(gamma.shape(), vec![5, cfg.stage_dims[0]]);
    assert_eq!(beta.shape(), vec![5, cfg.stage_dims[0]]);
    assert!(gamma.value().data().iter().all(|&v| v == 0.0));
    assert!(beta.value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn fd_geometry_module() {
    let mut rng = ChaCha12Rng::seed_from_u64(2);
    let mut ps = ParamSet::new();
    let stage = super::stage::Stage::build(&mut ps, "s", 8, 8, 12, 4, 16, 1e-5, &mut rng);
    let x0 = Tensor::uniform(&[1, 12], -1.0, 1.0, &mut rng);
    let f0 = Tensor::uniform(&[4, 8], -1.0, 1.0, &mut rng);
    let snapshot = ps.clone();
    let check = finite_diff_check(
        fd_fn(move |tape, v| {
            let tp = TapeParams::register(tape, &snapshot);
            let (gamma, beta) = stage.modulation(&tp, v[0], v[1]);
            gamma.sum_sq().add(beta.sum_sq())
        }),
        &[x0, f0],
        1e-5,
    );
    assert!(check.rel_error < 1e-4, "rel {}", check.rel_error);
}

// ---- semantic module ---------------------------------------------------------

#[test]
fn semantic_zero_importance_yields_bias() {
    let mut rng = ChaCha12Rng::seed_from_u64(3);
    let mut ps = ParamSet::new();
    let sem = SemanticSubspace::build(&mut ps, "sem", 6, 3, 5, &mut rng);
    let imp = ps.id_of("sem.importance").unwrap();
    ps.set(imp, Tensor::zeros(&[1, 3]));
    let bias_id = ps.id_of("sem.bias").unwrap();
    let bias = Tensor::uniform(&[1, 5], -1.0, 1.0, &mut rng);
    ps.set(bias_id, bias.clone());

    let tape = Tape::new();
    let tp = TapeParams::register(&tape, &ps);
    let x = tape.leaf(Tensor::uniform(&[1, 6], -1.0, 1.0, &mut rng));
    let s = sem.apply(&tp, x).unwrap();
    for (a, b) in s.value().data().iter().zip(bias.data()) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn semantic_single_basis_hand_case() {
    // One basis vector e1, importance 1, code 2, zero bias -> S = 2 e1.
    let mut rng = ChaCha12Rng::seed_from_u64(4);
    let mut ps = ParamSet::new();
    let sem = SemanticSubspace::build(&mut ps, "sem", 2, 1, 4, &mut rng);
    // code MLP is a single linear layer; force z = 2 for input [1, 0].
    let w = ps.id_of("sem.code.0.w").unwrap();
    ps.set(w, Tensor::from_vec(&[2, 1], vec![2.0, 0.0]));
    let b = ps.id_of("sem.code.0.b").unwrap();
    ps.set(b, Tensor::zeros(&[1, 1]));
    let basis = ps.id_of("sem.basis").unwrap();
    ps.set(basis, Tensor::from_vec(&[1, 4], vec![1.0, 0.0, 0.0, 0.0]));

    let tape = Tape::new();
    let tp = TapeParams::register(&tape, &ps);
    let x = tape.leaf(Tensor::from_vec(&[1, 2], vec![1.0, 0.0]));
    let s = sem.apply(&tp, x).unwrap();
    assert_eq!(s.value().data(), &[2.0, 0.0, 0.0, 0.0]);
}

#[test]
fn semantic_is_linear_in_importance() {
    // Doubling every importance with zero bias doubles S exactly.
    let mut rng = ChaCha12Rng::seed_from_u64(5);
    let mut ps = ParamSet::new();
    let sem = SemanticSubspace::build(&mut ps, "sem", 6, 3, 5, &mut rng);
    let bias_id = ps.id_of("sem.bias").unwrap();
    ps.set(bias_id, Tensor::zeros(&[1, 5]));
    let x_t = Tensor::uniform(&[1, 6], -1.0, 1.0, &mut rng);

    let eval = |ps: &ParamSet| {
        let tape = Tape::new();
        let tp = TapeParams::register(&tape, ps);
        let x = tape.leaf(x_t.clone());
        sem.apply(&tp, x).unwrap().value().data().to_vec()
    };
    let s1 = eval(&ps);
    let imp = ps.id_of("sem.importance").unwrap();
    let doubled = ps.get(imp).scale(2.0);
    ps.set(imp, doubled);
    let s2 = eval(&ps);
    for (a, b) in s1.iter().zip(&s2) {
        assert!((2.0 * a - b).abs() < 1e-12);
    }
}

#[test]
fn fd_semantic_module() {
    let mut rng = ChaCha12Rng::seed_from_u64(6);
    let mut ps = ParamSet::new();
    let sem = SemanticSubspace::build(&mut ps, "sem", 6, 3, 5, &mut rng);
    let x0 = Tensor::uniform(&[1, 6], -1.0, 1.0, &mut rng);
    let snapshot = ps.clone();
    let check = finite_diff_check(
        fd_fn(move |tape, v| {
            let tp = TapeParams::register(tape, &snapshot);
            sem.apply(&tp, v[0]).unwrap().sum_sq()
        }),
        &[x0],
        1e-5,
    );
    assert!(check.rel_error < 1e-4, "rel {}", check.rel_error);
}

// ---- point feature extractor ---------------------------------------------------

#[test]
fn extractor_single_point_is_function_of_itself() {
    let mut rng = ChaCha12Rng::seed_from_u64(7);
    let mut ps = ParamSet::new();
    let attn = PointAttention::build(&mut ps, "pa", 4, 6, &mut rng);
    let tape = Tape::new();
    let tp = TapeParams::register(&tape, &ps);
    let feats = tape.leaf(Tensor::uniform(&[1, 4], -1.0, 1.0, &mut rng));
    let out = attn.apply_global(&tp, feats);
    assert_eq!(out.shape(), vec![1, 6]);
    assert!(out.value().is_finite());
    // Neighborhood of a single point is itself on the local path too.
    let hood = Neighborhoods::build(&[[0.1, 0.2, 0.3]], 16);
    assert_eq!(hood.group, 1);
    let out_local = attn.apply_local(&tape, &tp, feats, &hood);
    assert!(out_local.value().is_finite());
}

#[test]
fn extractor_is_permutation_equivariant_local_path() {
    let mut rng = ChaCha12Rng::seed_from_u64(8);
    let mut ps = ParamSet::new();
    let attn = PointAttention::build(&mut ps, "pa", 5, 6, &mut rng);
    let cloud = random_cloud(&mut rng, 10);
    let feats_t = Tensor::uniform(&[10, 5], -1.0, 1.0, &mut rng);

    let run = |points: &[[f64; 3]], feats: &Tensor| {
        let tape = Tape::new();
        let tp = TapeParams::register(&tape, &ps);
        let hood = Neighborhoods::build(points, 3);
        let feats = tape.leaf(feats.clone());
        attn.apply_local(&tape, &tp, feats, &hood).value().as_ref().clone()
    };

    let base = run(cloud.points(), &feats_t);

    let perm: Vec<usize> = vec![3, 1, 7, 0, 9, 2, 8, 5, 4, 6];
    let pts_p: Vec<[f64; 3]> = perm.iter().map(|&i| cloud.points()[i]).collect();
    let mut feats_p = Tensor::zeros(&[10, 5]);
    for (new, &old) in perm.iter().enumerate() {
        for c in 0..5 {
            feats_p.data_mut()[new * 5 + c] = feats_t.at2(old, c);
        }
    }
    let permuted = run(&pts_p, &feats_p);
    for (new, &old) in perm.iter().enumerate() {
        for c in 0..6 {
            assert_eq!(
                permuted.at2(new, c).to_bits(),
                base.at2(old, c).to_bits(),
                "row {new} col {c}"
            );
        }
    }
}

#[test]
fn fd_point_feature_extractor_both_paths() {
    let mut rng = ChaCha12Rng::seed_from_u64(9);
    let mut ps = ParamSet::new();
    let attn = PointAttention::build(&mut ps, "pa", 8, 16, &mut rng);
    let cloud = random_cloud(&mut rng, 8);
    let feats = Tensor::uniform(&[8, 8], -1.0, 1.0, &mut rng);
    let probe = Tensor::uniform(&[8, 16], -1.0, 1.0, &mut rng);

    let snapshot = ps.clone();
    let attn_g = attn.clone();
    let probe_g = probe.clone();
    let check = finite_diff_check(
        fd_fn(move |tape, v| {
            let tp = TapeParams::register(tape, &snapshot);
            attn_g.apply_global(&tp, v[0]).mul_const(&probe_g).sum_all()
        }),
        &[feats.clone()],
        1e-5,
    );
    assert!(check.rel_error < 1e-4, "global rel {}", check.rel_error);

    let snapshot = ps.clone();
    let check = finite_diff_check(
        fd_fn(move |tape, v| {
            let tp = TapeParams::register(tape, &snapshot);
            let hood = Neighborhoods::build(cloud.points(), 3);
            attn.apply_local(tape, &tp, v[0], &hood)
                .mul_const(&probe)
                .sum_all()
        }),
        &[feats],
        1e-5,
    );
    assert!(check.rel_error < 1e-4, "local rel {}", check.rel_error);
}

// ---- adain ------------------------------------------------------------------

#[test]
fn adain_batch_standardizes() {
    let mut rng = ChaCha12Rng::seed_from_u64(10);
    let n = 64;
    let c = 6;
    let q = Tensor::uniform(&[n, c], -2.0, 3.0, &mut rng);
    let tape = Tape::new();
    let gamma = tape.leaf(Tensor::filled(&[n, c], 1.0));
    let beta = tape.leaf(Tensor::zeros(&[n, c]));
    let (out, _, _) = tape.leaf(q).adain_batch(gamma, beta, 1e-5);
    let y = out.value();
    for j in 0..c {
        let mean: f64 = (0..n).map(|i| y.at2(i, j)).sum::<f64>() / n as f64;
        let var: f64 = (0..n).map(|i| (y.at2(i, j) - mean).powi(2)).sum::<f64>() / n as f64;
        assert!(mean.abs() < 1e-6, "channel {j} mean {mean}");
        assert!((var.sqrt() - 1.0).abs() < 1e-5, "channel {j} std {}", var.sqrt());
    }
}

#[test]
fn adain_inverse_case_recovers_input() {
    // gamma = sigma(q), beta = mu(q) restores q.
    let mut rng = ChaCha12Rng::seed_from_u64(11);
    let n = 32;
    let c = 4;
    let q = Tensor::uniform(&[n, c], -1.0, 1.0, &mut rng);
    let mut mu = vec![0.0; c];
    let mut sig = vec![0.0; c];
    for j in 0..c {
        mu[j] = (0..n).map(|i| q.at2(i, j)).sum::<f64>() / n as f64;
        sig[j] = ((0..n).map(|i| (q.at2(i, j) - mu[j]).powi(2)).sum::<f64>() / n as f64).sqrt();
    }
    let mut gamma_t = Tensor::zeros(&[n, c]);
    let mut beta_t = Tensor::zeros(&[n, c]);
    for i in 0..n {
        for j in 0..c {
            gamma_t.data_mut()[i * c + j] = sig[j];
            beta_t.data_mut()[i * c + j] = mu[j];
        }
    }
    let tape = Tape::new();
    let (out, _, _) = tape
        .leaf(q.clone())
        .adain_batch(tape.leaf(gamma_t), tape.leaf(beta_t), 1e-5);
    for (a, b) in out.value().data().iter().zip(q.data()) {
        assert!((a - b).abs() < 1e-6);
    }
}

#[test]
fn adain_constant_channel_outputs_beta() {
    let n = 8;
    // Dyadic value: the channel mean is exact, so the variance is exactly
    // zero and the floored formula collapses to beta.
    let q = Tensor::filled(&[n, 1], 0.375);
    let beta_v = 0.91;
    let tape = Tape::new();
    let gamma = tape.leaf(Tensor::filled(&[n, 1], 1.3));
    let beta = tape.leaf(Tensor::filled(&[n, 1], beta_v));
    let (out, _, var) = tape.leaf(q).adain_batch(gamma, beta, 1e-5);
    assert_eq!(var.data()[0], 0.0);
    for v in out.value().data() {
        assert_eq!(*v, beta_v);
    }
}

// ---- decoder -------------------------------------------------------------------

#[test]
fn decoder_attention_rows_sum_to_one() {
    let cfg = tiny_config(DecoderKind::SelfAttention);
    let mut ps = ParamSet::new();
    let net = ReconNet::build(&cfg, &mut ps, 12).unwrap();
    let Decoder::SelfAttention(dec) = &net.decoder else {
        panic!("expected attention decoder")
    };
    let tape = Tape::new();
    let tp = TapeParams::register(&tape, &ps);
    let mut rng = ChaCha12Rng::seed_from_u64(13);
    let feats = tape.leaf(Tensor::uniform(&[9, cfg.d_model()], -1.0, 1.0, &mut rng));
    for weights in dec.attention_weights(&tp, feats) {
        assert_eq!(weights.shape(), &[9, 9]);
        for i in 0..9 {
            let s: f64 = (0..9).map(|j| weights.at2(i, j)).sum();
            assert!((s - 1.0).abs() < 1e-6);
            for j in 0..9 {
                assert!((0.0..=1.0).contains(&weights.at2(i, j)));
            }
        }
    }
}

#[test]
fn decoder_single_point_attention_is_identity_weight() {
    let cfg = tiny_config(DecoderKind::SelfAttention);
    let mut ps = ParamSet::new();
    let net = ReconNet::build(&cfg, &mut ps, 14).unwrap();
    let Decoder::SelfAttention(dec) = &net.decoder else {
        panic!("expected attention decoder")
    };
    let tape = Tape::new();
    let tp = TapeParams::register(&tape, &ps);
    let mut rng = ChaCha12Rng::seed_from_u64(15);
    let feats_t = Tensor::uniform(&[1, cfg.d_model()], -1.0, 1.0, &mut rng);
    let feats = tape.leaf(feats_t);
    for weights in dec.attention_weights(&tp, feats) {
        assert_eq!(weights.data(), &[1.0]);
    }
    // With weight 1 the mixed value equals the value projection itself.
    let mixed = dec.value_projection(&tp, feats);
    assert!(mixed.is_finite());
}

#[test]
fn zero_displacement_head_returns_initial_cloud() {
    // Freshly built networks zero-initialize the displacement head, so the
    // forward pass is exactly the identity on the initial cloud.
    for kind in [DecoderKind::SelfAttention, DecoderKind::Mlp] {
        let cfg = tiny_config(kind);
        let mut ps = ParamSet::new();
        let net = ReconNet::build(&cfg, &mut ps, 16).unwrap();
        let mut rng = ChaCha12Rng::seed_from_u64(17);
        let cloud = random_cloud(&mut rng, cfg.n_points);
        let image = random_image(&mut rng, cfg.img_size);
        let tape = Tape::new();
        let tp = TapeParams::register(&tape, &ps);
        let mut mode = Mode::Eval;
        let out = net
            .forward(&tape, &tp, &ps, &image, &cloud, &mut mode)
            .unwrap();
        let out_v = out.value();
        for (i, p) in cloud.points().iter().enumerate() {
            for a in 0..3 {
                assert_eq!(out_v.at2(i, a), p[a]);
            }
        }
    }
}

// ---- orthogonality loss ------------------------------------------------------

#[test]
fn orthogonality_loss_zero_on_orthonormal_bases() {
    let cfg = tiny_config(DecoderKind::SelfAttention);
    let mut ps = ParamSet::new();
    let net = ReconNet::build(&cfg, &mut ps, 18).unwrap();
    // Overwrite each basis with distinct unit axes (rows of identity).
    for i in 0..3 {
        let id = ps.id_of(&format!("stage{i}.sem.basis")).unwrap();
        let shape = ps.get(id).shape().to_vec();
        let (z, c) = (shape[0], shape[1]);
        let mut t = Tensor::zeros(&[z, c]);
        for j in 0..z {
            t.data_mut()[j * c + j] = 1.0;
        }
        ps.set(id, t);
    }
    let tape = Tape::new();
    let tp = TapeParams::register(&tape, &ps);
    let loss = net.orthogonality_loss(&tape, &tp);
    assert_eq!(loss.value().item(), 0.0);
}

#[test]
fn orthogonality_loss_hand_value() {
    // Two identical unit basis vectors: gram = [[1,1],[1,1]], penalty
    // ‖gram − I‖²_F = 2.
    let tape = Tape::new();
    let u = tape.leaf(Tensor::from_vec(&[2, 2], vec![1.0, 0.0, 1.0, 0.0]));
    let gram = u.matmul(u.transpose());
    let neg_eye = Tensor::identity(2).scale(-1.0);
    let loss = gram.add_const(&neg_eye).sum_sq();
    assert_eq!(loss.value().item(), 2.0);
}

#[test]
fn orthogonality_loss_matches_brute_force() {
    let cfg = tiny_config(DecoderKind::SelfAttention);
    let mut ps = ParamSet::new();
    let net = ReconNet::build(&cfg, &mut ps, 19).unwrap();
    let tape = Tape::new();
    let tp = TapeParams::register(&tape, &ps);
    let loss = net.orthogonality_loss(&tape, &tp).value().item();

    let mut expected = 0.0;
    for i in 0..3 {
        let id = ps.id_of(&format!("stage{i}.sem.basis")).unwrap();
        let u = ps.get(id);
        let (z, c) = (u.rows(), u.cols());
        for a in 0..z {
            for b in 0..z {
                let mut dot = 0.0;
                for k in 0..c {
                    dot += u.at2(a, k) * u.at2(b, k);
                }
                let target = if a == b { 1.0 } else { 0.0 };
                expected += (dot - target) * (dot - target);
            }
        }
    }
    assert!((loss - expected).abs() < 1e-12);
}

// ---- end-to-end forward ---------------------------------------------------------

#[test]
fn forward_joint_permutation_equivariance_is_exact() {
    let mut cfg = tiny_config(DecoderKind::SelfAttention);
    cfg.n_points = 12;
    let mut ps = ParamSet::new();
    let net = ReconNet::build(&cfg, &mut ps, 20).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(21);
    let cloud = random_cloud(&mut rng, 12);
    let image = random_image(&mut rng, cfg.img_size);

    // Give the displacement head nonzero weights so the test is not trivial.
    for e in 0..ps.len() {
        if ps.entries()[e].name.starts_with("decoder.disp") {
            let shape = ps.get(e).shape().to_vec();
            ps.set(e, Tensor::uniform(&shape, -0.3, 0.3, &mut rng));
        }
    }

    let run = |pc: &PointCloud| {
        let tape = Tape::new();
        let tp = TapeParams::register(&tape, &ps);
        let mut mode = Mode::Eval;
        net.forward(&tape, &tp, &ps, &image, pc, &mut mode)
            .unwrap()
            .value()
            .as_ref()
            .clone()
    };
    let base = run(&cloud);

    let perm: Vec<usize> = vec![5, 0, 11, 3, 8, 1, 10, 7, 2, 9, 4, 6];
    let permuted_cloud =
        PointCloud::new(perm.iter().map(|&i| cloud.points()[i]).collect()).unwrap();
    let permuted = run(&permuted_cloud);
    for (new, &old) in perm.iter().enumerate() {
        for a in 0..3 {
            assert_eq!(
                permuted.at2(new, a).to_bits(),
                base.at2(old, a).to_bits(),
                "point {new} axis {a}"
            );
        }
    }
}

#[test]
fn forward_equivariance_holds_on_local_attention_path() {
    let mut cfg = tiny_config(DecoderKind::SelfAttention);
    cfg.n_points = 12;
    cfg.global_attn_threshold = 4; // force the kNN path
    cfg.knn_k = 3;
    let mut ps = ParamSet::new();
    let net = ReconNet::build(&cfg, &mut ps, 22).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(23);
    let cloud = random_cloud(&mut rng, 12);
    let image = random_image(&mut rng, cfg.img_size);
    for e in 0..ps.len() {
        if ps.entries()[e].name.starts_with("decoder.disp") {
            let shape = ps.get(e).shape().to_vec();
            ps.set(e, Tensor::uniform(&shape, -0.3, 0.3, &mut rng));
        }
    }
    let run = |pc: &PointCloud| {
        let tape = Tape::new();
        let tp = TapeParams::register(&tape, &ps);
        let mut updates: StatUpdates = Vec::new();
        let mut mode = Mode::Train(&mut updates);
        net.forward(&tape, &tp, &ps, &image, pc, &mut mode)
            .unwrap()
            .value()
            .as_ref()
            .clone()
    };
    let base = run(&cloud);
    let perm: Vec<usize> = vec![11, 2, 9, 0, 7, 4, 1, 10, 3, 8, 5, 6];
    let permuted_cloud =
        PointCloud::new(perm.iter().map(|&i| cloud.points()[i]).collect()).unwrap();
    let permuted = run(&permuted_cloud);
    for (new, &old) in perm.iter().enumerate() {
        for a in 0..3 {
            assert_eq!(permuted.at2(new, a).to_bits(), base.at2(old, a).to_bits());
        }
    }
}

#[test]
fn fd_end_to_end_forward() {
    // Differentiates a chamfer-style probe loss of the full forward pass
    // with respect to the image pixels; this exercises every module's
    // backward in composition.
    let cfg = tiny_config(DecoderKind::SelfAttention);
    let mut ps = ParamSet::new();
    let net = ReconNet::build(&cfg, &mut ps, 24).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(25);
    // Nonzero displacement head so gradients reach the image.
    for e in 0..ps.len() {
        let name = ps.entries()[e].name.clone();
        if name.starts_with("decoder.disp") {
            let shape = ps.get(e).shape().to_vec();
            ps.set(e, Tensor::uniform(&shape, -0.2, 0.2, &mut rng));
        }
    }
    let cloud = random_cloud(&mut rng, cfg.n_points);
    let pixels = Tensor::uniform(&[1, cfg.img_size, cfg.img_size], 0.0, 1.0, &mut rng);
    let probe = Tensor::uniform(&[cfg.n_points, 3], -1.0, 1.0, &mut rng);
    let snapshot = ps.clone();
    let check = finite_diff_check(
        fd_fn(move |tape, v| {
            let tp = TapeParams::register(tape, &snapshot);
            let x = net.image_encoder.apply_var(&tp, v[0]);
            let mut mode = Mode::Eval;
            net.forward_from_feature(tape, &tp, &snapshot, x, &cloud, &mut mode)
                .unwrap()
                .mul_const(&probe)
                .sum_all()
        }),
        &[pixels],
        1e-5,
    );
    assert!(check.rel_error < 1e-4, "rel {}", check.rel_error);
}

#[test]
fn fd_end_to_end_through_parameters() {
    // Differentiates with respect to a sample of actual network parameters.
    let cfg = tiny_config(DecoderKind::SelfAttention);
    let mut ps = ParamSet::new();
    let net = ReconNet::build(&cfg, &mut ps, 26).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(27);
    for e in 0..ps.len() {
        if ps.entries()[e].name.starts_with("decoder.disp") {
            let shape = ps.get(e).shape().to_vec();
            ps.set(e, Tensor::uniform(&shape, -0.2, 0.2, &mut rng));
        }
    }
    let cloud = random_cloud(&mut rng, cfg.n_points);
    let image = random_image(&mut rng, cfg.img_size);
    let target = random_cloud(&mut rng, cfg.n_points);

    // Pick a few parameters spanning the pipeline.
    let names = [
        "embed.w",
        "stage0.geom.0.w",
        "stage1.sem.basis",
        "stage2.attn.wv.w",
        "decoder.wq.w",
        "decoder.disp.0.w",
    ];
    let ids: Vec<usize> = names.iter().map(|n| ps.id_of(n).unwrap()).collect();
    let inputs: Vec<Tensor> = ids.iter().map(|&id| ps.get(id).clone()).collect();
    let base = ps.clone();
    let check = finite_diff_check(
        fd_fn(move |tape, v| {
            let mut ps_local = base.clone();
            for (slot, &id) in ids.iter().enumerate() {
                ps_local.set(id, v[slot].value().as_ref().clone());
            }
            // Re-register so the tape sees the perturbed values, then splice
            // the supplied vars in for gradient flow.
            let tp = TapeParams::register_with_overrides(tape, &ps_local, &ids, v);
            let mut mode = Mode::Eval;
            let out = net
                .forward(tape, &tp, &ps_local, &image, &cloud, &mut mode)
                .unwrap();
            crate::nn::chamfer_to_const(out, &target)
        }),
        &inputs,
        1e-5,
    );
    assert!(check.rel_error < 1e-4, "rel {}", check.rel_error);
}

#[test]
fn stat_updates_move_buffers_with_momentum() {
    let cfg = tiny_config(DecoderKind::SelfAttention);
    let mut ps = ParamSet::new();
    let net = ReconNet::build(&cfg, &mut ps, 28).unwrap();
    let mut rng = ChaCha12Rng::seed_from_u64(29);
    let cloud = random_cloud(&mut rng, cfg.n_points);
    let image = random_image(&mut rng, cfg.img_size);
    let (mean_id, _) = net.stage(0).buffer_ids();
    let before = ps.get(mean_id).clone();

    let mut updates: StatUpdates = Vec::new();
    {
        let tape = Tape::new();
        let tp = TapeParams::register(&tape, &ps);
        let mut mode = Mode::Train(&mut updates);
        net.forward(&tape, &tp, &ps, &image, &cloud, &mut mode).unwrap();
    }
    assert_eq!(updates.len(), 6); // mean and var per stage
    net.apply_stat_updates(&mut ps, &updates);
    let after = ps.get(mean_id);
    let batch = &updates.iter().find(|(id, _)| *id == mean_id).unwrap().1;
    for i in 0..before.len() {
        let expected = 0.9 * before.data()[i] + 0.1 * batch.data()[i];
        assert!((after.data()[i] - expected).abs() < 1e-12);
    }
}
