//! Exploratory timing/trend probe (ignored by default).

use std::time::Instant;

use groupact::knowledge::MapGrid;
use groupact::model::ModelConfig;
use groupact::synth::{annotations_for, gen_dataset, GenConfig};
use groupact::train::{
    evaluate, run_ablation, train, AblationConfig, KnowledgeMaps, OptimConfig, Variant,
};

fn one_cell(variant: Variant, gen: &GenConfig, optim: &OptimConfig, label: &str) {
    let model = ModelConfig::default();
    let data = gen_dataset(gen).unwrap();
    let ann = annotations_for(&data.vocabulary, &data.train).unwrap();
    let maps = KnowledgeMaps::build(&ann, MapGrid::default()).unwrap();
    let start = Instant::now();
    let result = train(variant, &data.train, &maps, &model, optim).unwrap();
    let m = evaluate(&result.state, variant, &data.test, &maps, None).unwrap();
    let h = &result.history;
    println!(
        "{label:>28} [{}] mca {:6.2} | loss e0 {:.3} e{} {:.3} | {:?}",
        variant.name(),
        m.mca,
        h.first().map(|e| e.total).unwrap_or(0.0),
        h.len() - 1,
        h.last().map(|e| e.total).unwrap_or(0.0),
        start.elapsed()
    );
}

#[test]
#[ignore]
fn probe_base_dynamics() {
    let optim = OptimConfig::default();
    let clean = GenConfig {
        noise_rho: 0.0,
        ..GenConfig::default()
    };
    one_cell(Variant::Base, &clean, &optim, "rho=0 default-lr");
    one_cell(Variant::Base, &GenConfig::default(), &optim, "rho=0.3 default-lr");
    let hot = OptimConfig {
        lr_init: 1e-3,
        lr_final: 1e-5,
        ..OptimConfig::default()
    };
    one_cell(Variant::Base, &clean, &hot, "rho=0 lr1e-3");
    one_cell(Variant::Base, &GenConfig::default(), &hot, "rho=0.3 lr1e-3");
    one_cell(Variant::BaseSemantic, &GenConfig::default(), &hot, "rho=0.3 lr1e-3");
    one_cell(Variant::Full, &GenConfig::default(), &hot, "rho=0.3 lr1e-3");
}

#[test]
#[ignore]
fn probe_sigma_effect() {
    for (lr_init, lr_final, tag) in [(1e-4, 1e-6, "lr1e-4"), (1e-3, 1e-5, "lr1e-3")] {
        for seed in [0u64, 1] {
            let gen = GenConfig {
                zone_sigma_signature: 0.04,
                zone_sigma_filler: 0.06,
                seed,
                ..GenConfig::default()
            };
            let optim = OptimConfig {
                lr_init,
                lr_final,
                ..OptimConfig::default()
            };
            println!("-- {tag} seed {seed} (sig 0.04 / fill 0.06)");
            one_cell(Variant::BaseSemantic, &gen, &optim, "b+s");
            one_cell(Variant::Full, &gen, &optim, "full");
            one_cell(Variant::Base, &gen, &optim, "base");
        }
    }
}

#[test]
#[ignore]
fn probe_trend_and_speed() {
    let gen = GenConfig::default();
    let model = ModelConfig::default();
    let optim = OptimConfig::default();
    let ab = AblationConfig {
        variants: vec![Variant::Base, Variant::BaseSemantic, Variant::Full],
        ..AblationConfig::new(vec![0])
    };
    let start = Instant::now();
    let report = run_ablation(&model, &gen, &optim, &ab).unwrap();
    let elapsed = start.elapsed();
    for a in &report.aggregates {
        println!(
            "{:>22}  mca {:6.2}  mpca {:6.2}  delta {:?}",
            a.variant, a.mean_mca, a.mean_mpca, a.delta_mca_vs_base
        );
    }
    println!("elapsed: {elapsed:?}");
}
