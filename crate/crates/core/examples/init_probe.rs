// Scratch probe: distribution of the initial winner channel m* across
// (image, mask) pairs, per init seed. Not part of the deliverable.

use std::path::PathBuf;

use styleseg_core::data::{generate_annotated_sample, Corpus, Split, StyleParams, SynthConfig};
use styleseg_core::losses::{best_style_index, SelectionRule};
use styleseg_core::models::{SegModel, SegModelConfig};
use styleseg_core::rng::Rng;

fn corpus(n: usize) -> Corpus {
    let cfg = SynthConfig {
        n_images: n,
        resolution: 64,
        master_seed: 7,
        styles: vec![
            StyleParams { margin: 4, seed: 1, ..StyleParams::identity() },
            StyleParams { margin: -4, seed: 2, ..StyleParams::identity() },
        ],
        coverage_p: 1.0,
        per_style_coverage: None,
        split_fractions: [1.0, 0.0, 0.0],
        noise_sigma: 0.05,
    };
    Corpus {
        samples: (0..n).map(|i| generate_annotated_sample(&cfg, i)).collect(),
        manifest: Default::default(),
        warnings: Vec::new(),
        root: PathBuf::new(),
    }
}

fn main() {
    let corpus = corpus(60);
    let train = corpus.split_samples(Split::Train);
    println!("seed | m*=1 total | tight: m*=1 | loose: m*=1");
    for seed in 0..10u64 {
        let cfg = SegModelConfig {
            m: 2,
            base_width: 8,
            n_stages: 3,
            resolution: 64,
        };
        let model = SegModel::init(cfg, Rng::derived(seed, 1).next_u64()).unwrap();
        let mut win1 = 0usize;
        let mut total = 0usize;
        let mut tight_win1 = 0usize;
        let mut tight = 0usize;
        let mut loose_win1 = 0usize;
        let mut loose = 0usize;
        for s in &train {
            let stack = model.forward(s.image.pixels()).unwrap();
            for gt in &s.masks {
                let m_star = best_style_index(gt, &stack, 1.0, SelectionRule::Soft).unwrap();
                total += 1;
                if m_star == 1 {
                    win1 += 1;
                }
                if gt.planted_style == Some(2) {
                    tight += 1;
                    if m_star == 1 {
                        tight_win1 += 1;
                    }
                } else {
                    loose += 1;
                    if m_star == 1 {
                        loose_win1 += 1;
                    }
                }
            }
        }
        println!(
            "{seed:4} | {:10.2}% | {:10.2}% | {:10.2}%",
            100.0 * win1 as f64 / total as f64,
            100.0 * tight_win1 as f64 / tight as f64,
            100.0 * loose_win1 as f64 / loose as f64,
        );
    }
}
