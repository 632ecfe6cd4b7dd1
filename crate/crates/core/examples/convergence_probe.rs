use duodet::detector::{build_model, evaluate_model, HeadKind, ModelConfig, TrainConfig, Trainer};
use duodet::losses::LossWeights;
use duodet::scenegen::{generate_scene, Dataset, DatasetEntry, SceneConfig};

fn dataset(n: u64, base: u64) -> Dataset {
    let cfg = SceneConfig::default();
    let entries: Vec<DatasetEntry> = (0..n)
        .map(|i| DatasetEntry { seed: base + i, gts: generate_scene(base + i, &cfg).gts })
        .collect();
    Dataset { config: cfg, entries }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let regime = args.get(1).cloned().unwrap_or("dual".into());
    let iters: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(3000);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);

    let train = dataset(2000, 0);
    let test = dataset(500, 1_000_000);

    let mut weights = LossWeights::dual_fcos();
    if regime == "o2o" { weights.lambda_o2m = 0.0; }
    if regime == "o2m" { weights.lambda_o2o = 0.0; }

    let model = build_model(&ModelConfig::default(), seed).unwrap();
    let mut tcfg = TrainConfig::new(iters, seed);
    tcfg.weights = weights;
    tcfg.eval_interval = 300;
    let mut trainer = Trainer::new(model, tcfg, train, Some(test.clone())).unwrap();
    let out = trainer.run().unwrap();
    for s in &out.evals {
        println!("{} seed{} iter {:>5}: AP50 {:.3} AP {:.3} R@100 {:.3}", regime, seed, s.iter, s.result.ap50 * 100.0, s.result.ap * 100.0, s.result.recall_at_k * 100.0);
    }
    // cls loss curve samples
    let h = &out.history;
    for probe in [100usize, 500, 1000, 1500, 2000, 2500, 2999] {
        if probe < h.len() {
            let lo = probe.saturating_sub(50);
            let hi = (probe + 50).min(h.len());
            let med = {
                let mut v: Vec<f64> = h[lo..hi].iter().map(|r| r.report.l_o2o_cls).collect();
                v.sort_by(|a, b| a.partial_cmp(b).unwrap());
                v[v.len() / 2]
            };
            println!("{} seed{} cls@{}: {:.4}", regime, seed, probe, med);
        }
    }
}
