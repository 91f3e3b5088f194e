// Scratch probe: acceptance-configuration outcomes across training seeds.
// Not part of the deliverable.

use std::path::PathBuf;

use styleseg_core::data::{generate_annotated_sample, Corpus, Split, StyleParams, SynthConfig};
use styleseg_core::evaluation::{self, GroupKey};
use styleseg_core::losses::SelectionRule;
use styleseg_core::training::{train, TrainConfig, TrainMode};

fn main() {
    let synth = SynthConfig {
        n_images: 200,
        resolution: 64,
        master_seed: 7,
        styles: vec![
            StyleParams { margin: 4, seed: 1, ..StyleParams::identity() },
            StyleParams { margin: -4, seed: 2, ..StyleParams::identity() },
        ],
        coverage_p: 1.0,
        per_style_coverage: None,
        split_fractions: [0.7, 0.15, 0.15],
        noise_sigma: 0.05,
    };
    let corpus = Corpus {
        samples: (0..200).map(|i| generate_annotated_sample(&synth, i)).collect(),
        manifest: Default::default(),
        warnings: Vec::new(),
        root: PathBuf::new(),
    };
    let test = corpus.split_samples(Split::Test);

    let base = TrainConfig {
        mode: TrainMode::StyleSeg,
        m: 2,
        epochs: 30,
        batch_size: 8,
        learning_rate: 1e-3,
        seed: 0,
        loss_weights: [1.0, 1.0, 1.0],
        mhp_eps: 0.05,
        smooth: 1.0,
        selection: SelectionRule::Soft,
        resolution: 64,
        base_width: 8,
        n_stages: 3,
        cls_base_width: 8,
        cls_n_stages: 3,
        warmup_epochs: 6,
        checkpoint_dir: PathBuf::new(),
    };

    println!("seed | ss_iass ss_min | mhp_min | naive | as2(min) | d=ss-mhp");
    for seed in [11u64, 12, 13, 14, 15, 16, 17, 18] {
        let ss_cfg = TrainConfig { seed, ..base.clone() };
        let (ss, _) = train(&corpus, &ss_cfg).unwrap();
        let mhp_cfg = TrainConfig { mode: TrainMode::Mhp, seed, ..base.clone() };
        let (mhp, _) = train(&corpus, &mhp_cfg).unwrap();
        let naive_cfg = TrainConfig { mode: TrainMode::Naive, m: 1, seed, ..base.clone() };
        let (naive, _) = train(&corpus, &naive_cfg).unwrap();

        let rs = evaluation::evaluate_corpus(&ss.seg, &test, 0.5).unwrap();
        let rm = evaluation::evaluate_corpus(&mhp.seg, &test, 0.5).unwrap();
        let rn = evaluation::evaluate_corpus(&naive.seg, &test, 0.5).unwrap();

        let ss_stats = evaluation::style_statistics(&rs).unwrap();
        let mhp_stats = evaluation::style_statistics(&rm).unwrap();
        let naive_iass = evaluation::dice_iass(&rn).unwrap().mean;
        let table = evaluation::group_style_assignment(&rs, GroupKey::PlantedStyle).unwrap();
        let as2_min = table
            .rows
            .iter()
            .map(|r| r.as2)
            .fold(f64::INFINITY, f64::min);
        println!(
            "{seed:4} | {:.4} {:.4} | {:.4} | {:.4} | {:.4}{} | {:+.4}",
            ss_stats.max.mean,
            ss_stats.min.mean,
            mhp_stats.min.mean,
            naive_iass,
            as2_min,
            if table.modal_styles_distinct { "" } else { " !modal" },
            ss_stats.min.mean - mhp_stats.min.mean,
        );
    }
}
