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
    let train = dataset(2000, 0);
    let test = dataset(300, 1_000_000);
    let mut weights = LossWeights::dual_fcos();
    weights.lambda_o2o = 0.0;
    let model = build_model(&ModelConfig::default(), 0).unwrap();
    let mut tcfg = TrainConfig::new(1500, 0);
    tcfg.weights = weights;
    let mut trainer = Trainer::new(model, tcfg, train, None).unwrap();
    for chunk in 0..5 {
        for i in 0..300 { trainer.step(chunk * 300 + i).unwrap(); }
        let nms = evaluate_model(&trainer.model, &test, HeadKind::O2m, Some(0.6), 100).unwrap();
        let raw = evaluate_model(&trainer.model, &test, HeadKind::O2m, None, 100).unwrap();
        println!("o2m iter {:>4}: AP50(nms) {:.1} AP(nms) {:.1} | AP50(raw) {:.1}", (chunk+1)*300, nms.ap50*100.0, nms.ap*100.0, raw.ap50*100.0);
    }
}
