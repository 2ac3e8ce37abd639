// Scratch diagnosis probe; removed before final commit.
use ssmp_core::data::{generate_synthetic_dataset, split_labeled, SplitSpec, SynthConfig};
use ssmp_core::net::{DecoderKind, Mode, NetConfig, ReconNet};
use ssmp_core::nn::{ParamSet, Tape, TapeParams};
use ssmp_core::train::*;
use ssmp_core::cloud::chamfer_distance;

fn main() {
    let mut ds = generate_synthetic_dataset(&SynthConfig {
        per_category: 60, train_per_category: 48,
        n_points: 32, render_points: 1024, img_size: 32, seed: 505,
        azimuth_range: (-1.0, 1.0), elevation_range: (0.1, 0.7),
        ..SynthConfig::default()
    }).unwrap();
    split_labeled(&mut ds, &SplitSpec { labeled_ratio: 0.5, seed: 1 }).unwrap();
    let net_cfg = NetConfig {
        n_points: 32, img_size: 32, img_channels: 1, conv_channels: vec![8, 16, 32],
        d_img: 64, stage_dims: [24, 16, 16], z_dim: 8, heads: 4, knn_k: 8,
        global_attn_threshold: 64, decoder: DecoderKind::SelfAttention,
        hidden: 32, sigma_floor: 1e-5, adain_momentum: 0.9,
    };
    let pcfg = PipelineConfig { net: net_cfg.clone(), ae_epochs: 100, ..PipelineConfig::default() };
    let priors = build_priors(&ds.train_view(), &pcfg).unwrap();
    let view = ds.train_view();
    let cfg = TrainConfig { warmup_epochs: 100, warmup_batch: 32, seed: 3, lr_start: 3e-3, ..TrainConfig::default() };
    let (params, recs) = warmup_train(&view.labeled(), &priors, &net_cfg, &cfg, &mut TrainHooks::default()).unwrap();
    println!("train cd: {:.4} -> {:.4}", recs.first().unwrap().loss_cd.unwrap()*100.0, recs.last().unwrap().loss_cd.unwrap()*100.0);

    let mut scratch = ParamSet::new();
    let net = ReconNet::build(&net_cfg, &mut scratch, cfg.seed).unwrap();
    // Evaluate test samples twice: moving-average stats vs instance stats.
    let mut cd_eval = 0.0;
    let mut cd_inst = 0.0;
    let mut n = 0.0;
    for s in ds.test_samples() {
        let gt = s.eval_ground_truth().unwrap();
        let prior = priors.cloud(&s.category).unwrap();
        let tape = Tape::new();
        let tp = TapeParams::register(&tape, &params);
        let mut mode = Mode::Eval;
        let pred = net.forward(&tape, &tp, &params, &s.image, prior, &mut mode).unwrap();
        let pred = ssmp_core::cloud::PointCloud::from_flat(pred.value().data()).unwrap();
        cd_eval += chamfer_distance(&pred, gt).unwrap();

        let tape2 = Tape::new();
        let tp2 = TapeParams::register(&tape2, &params);
        let mut sink = Vec::new();
        let mut mode2 = Mode::Train(&mut sink);
        let pred2 = net.forward(&tape2, &tp2, &params, &s.image, prior, &mut mode2).unwrap();
        let pred2 = ssmp_core::cloud::PointCloud::from_flat(pred2.value().data()).unwrap();
        cd_inst += chamfer_distance(&pred2, gt).unwrap();
        n += 1.0;
    }
    println!("test cd, moving-average stats: {:.4}", cd_eval / n * 100.0);
    println!("test cd, instance stats:       {:.4}", cd_inst / n * 100.0);
}
