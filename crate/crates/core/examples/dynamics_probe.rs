// Scratch probe: style-separation dynamics vs learning rate. Prints the
// mean Dice of each predicted channel against each planted style on the val
// split, plus the classifier entropy, every few epochs. Not part of the
// deliverable.

use std::path::PathBuf;

use styleseg_core::data::{generate_annotated_sample, Corpus, Split, StyleParams, SynthConfig};
use styleseg_core::losses::SelectionRule;
use styleseg_core::metrics;
use styleseg_core::training::{resume, train, Checkpoint, RunLog, TrainConfig, TrainMode};

fn corpus(n: usize) -> Corpus {
    let cfg = SynthConfig {
        n_images: n,
        resolution: 64,
        master_seed: 7,
        styles: if std::env::var("PROBE_JAGGED").is_ok() {
            vec![
                StyleParams {
                    margin: 4,
                    jaggedness_amplitude: 1.5,
                    jaggedness_frequency: 7,
                    smoothing_radius: 0,
                    seed: 1,
                },
                StyleParams {
                    margin: -4,
                    jaggedness_amplitude: 1.5,
                    jaggedness_frequency: 4,
                    smoothing_radius: 0,
                    seed: 2,
                },
            ]
        } else {
            vec![
                StyleParams { margin: 4, seed: 1, ..StyleParams::identity() },
                StyleParams { margin: -4, seed: 2, ..StyleParams::identity() },
            ]
        },
        coverage_p: 1.0,
        per_style_coverage: std::env::var("PROBE_COVERAGE")
            .ok()
            .map(|v| v.split(',').map(|x| x.parse().unwrap()).collect()),
        split_fractions: [0.7, 0.15, 0.15],
        noise_sigma: 0.05,
    };
    Corpus {
        samples: (0..n).map(|i| generate_annotated_sample(&cfg, i)).collect(),
        manifest: Default::default(),
        warnings: Vec::new(),
        root: PathBuf::new(),
    }
}

fn channel_style_matrix(ckpt: &Checkpoint, corpus: &Corpus) {
    let val = corpus.split_samples(Split::Val);
    let m = ckpt.config.m;
    let mut sums = vec![vec![0.0f64; 2]; m];
    let mut counts = vec![vec![0usize; 2]; m];
    for sample in &val {
        let stack = ckpt.seg.forward(sample.image.pixels()).unwrap();
        for gt in &sample.masks {
            let style = gt.planted_style.unwrap() - 1;
            for j in 0..m {
                let hard = styleseg_core::data::BinaryMask::from_plane(
                    stack.channel(j),
                    64,
                    64,
                    0.5,
                )
                .unwrap();
                sums[j][style] += metrics::dice(&hard, gt).unwrap();
                counts[j][style] += 1;
            }
        }
    }
    for j in 0..m {
        print!("    ch{}:", j + 1);
        for s in 0..2 {
            print!(" vs S{} {:.3}", s + 1, sums[j][s] / counts[j][s] as f64);
        }
        println!();
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let lr: f64 = args.get(1).map(|s| s.parse().unwrap()).unwrap_or(3e-4);
    let batch: usize = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(8);
    let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(60);
    let n: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(200);
    let stride: usize = args.get(5).map(|s| s.parse().unwrap()).unwrap_or(5);

    let corpus = corpus(n);
    let cfg = TrainConfig {
        mode: args.get(8).map(|s| if s == "mhp" { TrainMode::Mhp } else { TrainMode::StyleSeg }).unwrap_or(TrainMode::StyleSeg),
        m: 2,
        epochs: stride,
        batch_size: batch,
        learning_rate: lr,
        seed: args.get(6).map(|s| s.parse().unwrap()).unwrap_or(11),
        loss_weights: [1.0, 1.0, 1.0],
        mhp_eps: 0.05,
        smooth: 1.0,
        warmup_epochs: args.get(7).map(|s| s.parse().unwrap()).unwrap_or(0),
        selection: SelectionRule::Soft,
        resolution: 64,
        base_width: 8,
        n_stages: 3,
        cls_base_width: 8,
        cls_n_stages: 3,
        checkpoint_dir: PathBuf::new(),
    };
    println!("lr {lr}  batch {batch}  epochs {epochs}  n {n}");
    let started = std::time::Instant::now();
    let (mut state, mut log) = train(&corpus, &cfg).unwrap();
    loop {
        let e = log.epochs.last().unwrap();
        println!(
            "  epoch {:3}  total {:.4}  val {:.4}  H(p) {:.4}  [{:.0}s]",
            e.epoch,
            e.train_total,
            e.val_total,
            e.val_p_entropy,
            started.elapsed().as_secs_f64()
        );
        channel_style_matrix(&state, &corpus);
        {
            let val = corpus.split_samples(Split::Val);
            let records = styleseg_core::evaluation::evaluate_corpus(&state.seg, &val, 0.5).unwrap();
            let stats = styleseg_core::evaluation::style_statistics(&records).unwrap();
            println!("    stats: max {:.4} min {:.4}", stats.max.mean, stats.min.mean);
        }
        if state.epoch >= epochs {
            break;
        }
        state.config.epochs = (state.epoch + stride).min(epochs);
        let out = resume(&corpus, state, log).unwrap();
        state = out.0;
        log = out.1;
    }
}
