// Scratch calibration probe; removed before final commit.
use ssmp_core::data::{generate_synthetic_dataset, SynthConfig};
use ssmp_core::net::{DecoderKind, NetConfig};
use ssmp_core::pipeline::run_pipeline;
use ssmp_core::train::{PipelineConfig, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let warmup: usize = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(40);
    let guided: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(10);
    let ratio: f64 = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(0.1);
    let seed: u64 = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(1);
    let alpha0: f64 = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(0.9996);
    let lr: f64 = args.get(6).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
    let az: f64 = args.get(7).map(|s| s.parse().unwrap()).unwrap_or(std::f64::consts::TAU);
    let big: usize = args.get(8).map(|s| s.parse().unwrap()).unwrap_or(0);

    let t0 = std::time::Instant::now();
    let mut ds = generate_synthetic_dataset(&SynthConfig {
        per_category: 300,
        train_per_category: 240,
        n_points: 32,
        render_points: 1024,
        img_size: 32,
        seed: 505,
        azimuth_range: (-az / 2.0, az / 2.0),
        elevation_range: (0.1, 0.7),
        ..SynthConfig::default()
    }).unwrap();
    eprintln!("dataset: {:?}", t0.elapsed());

    let cfg = PipelineConfig {
        net: if big == 1 { NetConfig {
            n_points: 32, img_size: 32, img_channels: 1, conv_channels: vec![12, 24, 48],
            d_img: 96, stage_dims: [32, 24, 24], z_dim: 8, heads: 4, knn_k: 8,
            global_attn_threshold: 64, decoder: DecoderKind::SelfAttention,
            hidden: 48, sigma_floor: 1e-5, adain_momentum: 0.9,
        }} else { NetConfig {
            n_points: 32, img_size: 32, img_channels: 1, conv_channels: vec![8, 16, 32],
            d_img: 64, stage_dims: [24, 16, 16], z_dim: 8, heads: 4, knn_k: 8,
            global_attn_threshold: 64, decoder: DecoderKind::SelfAttention,
            hidden: 32, sigma_floor: 1e-5, adain_momentum: 0.9,
        }},
        train: TrainConfig {
            warmup_epochs: warmup, guided_epochs: guided,
            seed, alpha0, lr_start: lr, ..TrainConfig::default()
        },
        ae_epochs: 150,
        labeled_ratio: ratio,
        split_seed: seed,
        ..PipelineConfig::default()
    };
    let t1 = std::time::Instant::now();
    let res = run_pipeline(&mut ds, &cfg).unwrap();
    let warm = res.warmup_eval.overall_mean_cd;
    let fin = res.final_eval.overall_mean_cd;
    // Student eval for diagnosis.
    let mut scratch = ssmp_core::nn::ParamSet::new();
    let net = ssmp_core::net::ReconNet::build(&cfg.net, &mut scratch, cfg.train.seed).unwrap();
    let stu = ssmp_core::eval::evaluate(&net, &res.state.student, &ds, &res.priors, "student", seed).unwrap();
    let base_params = scratch.clone();
    let baseline = ssmp_core::eval::evaluate(&net, &base_params, &ds, &res.priors, "prior", seed).unwrap();
    let tr_first = res.warmup_records.first().map(|r| r.loss_cd.unwrap()).unwrap_or(f64::NAN);
    let tr_last = res.warmup_records.last().map(|r| r.loss_cd.unwrap()).unwrap_or(f64::NAN);
    println!(
        "w={warmup} g={guided} r={ratio} s={seed} a0={alpha0} lr={lr}: prior={:.4} train {:.4}->{:.4} warm={:.4} final={:.4} student={:.4} gain={:.2}% ({:.0?})",
        baseline.overall_mean_cd * 100.0, tr_first * 100.0, tr_last * 100.0,
        warm * 100.0, fin * 100.0, stu.overall_mean_cd * 100.0, res.relative_improvement() * 100.0, t1.elapsed()
    );
}
