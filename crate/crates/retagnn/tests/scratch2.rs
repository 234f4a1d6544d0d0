// Temporary probe for ablation separation under long-tail pools; removed
// before finalizing.

use retagnn::graph::GraphBuilder;
use retagnn::harness::{
    config_samples, eval_csr, train, train_items_by_user, PopularityRanker, SyntheticSpec,
};
use retagnn::ingest::Split;
use retagnn::recommender::ModelConfig;

fn accept_config() -> ModelConfig {
    let mut config = ModelConfig::default();
    config.dim = 16;
    config.session_len = 6;
    config.future_len = 3;
    config.subsession_len = 3;
    config.max_nodes_per_hop = Some(12);
    config.learning_rate = 0.005;
    config.max_epochs = 10;
    config.patience = 10;
    config
}

#[test]
#[ignore]
fn probe_zipf_ablations() {
    for seed in [11u64, 23, 47] {
        let spec = SyntheticSpec::new("planted");
        let dataset = retagnn::harness::planted_dataset(&spec, seed);
        let config = accept_config();
        let samples = config_samples(&dataset, &config);
        let full = train(&dataset, &samples, config.clone(), seed).unwrap();
        let full_n = eval_csr(&full.model, &dataset, &samples).unwrap().ndcg;
        let builder = GraphBuilder::new(&dataset.catalog, &dataset.sequences, &samples, true);
        let pop = PopularityRanker::new(&builder, dataset.catalog.n_items());
        let exclusions = train_items_by_user(&builder);
        let test: Vec<_> = samples
            .iter()
            .filter(|s| s.split == Split::Test)
            .cloned()
            .collect();
        let pop_n = pop.mean_metrics(&test, &exclusions, 10).ndcg;
        print!("seed {seed}: full={full_n:.4} pop={pop_n:.4}");
        for flag in [
            "no_ragnn",
            "no_attrs",
            "no_rar",
            "no_rel_attention",
            "no_ssa",
            "no_short",
            "no_long",
        ] {
            let mut c = config.clone();
            c.set(flag, "true").unwrap();
            let out = train(&dataset, &samples, c, seed).unwrap();
            let n = eval_csr(&out.model, &dataset, &samples).unwrap().ndcg;
            print!(" {flag}={:.4}({:+.4})", n, full_n - n);
        }
        println!();
    }
}
