use duodet::detector::{build_model, ModelConfig, TrainConfig, Trainer};
use duodet::scenegen::{generate_scene, Dataset, DatasetEntry, SceneConfig};
use std::time::Instant;

fn main() {
    let cfg = SceneConfig::default();
    let entries: Vec<DatasetEntry> = (0..200u64)
        .map(|seed| DatasetEntry { seed, gts: generate_scene(seed, &cfg).gts })
        .collect();
    let data = Dataset { config: cfg, entries };
    let model = build_model(&ModelConfig::default(), 1).unwrap();
    println!("params: {}", model.param_count());
    let tcfg = TrainConfig::new(60, 1);
    let mut trainer = Trainer::new(model, tcfg, data.clone(), None).unwrap();
    // warmup
    for i in 0..5 { trainer.step(i).unwrap(); }
    let t0 = Instant::now();
    let n = 50;
    for i in 0..n { trainer.step(i + 5).unwrap(); }
    let dt = t0.elapsed();
    println!("step time: {:.1} ms (batch 4)", dt.as_secs_f64() * 1000.0 / n as f64);

    // eval timing
    let t0 = Instant::now();
    let r = duodet::detector::evaluate_model(&trainer.model, &data, duodet::detector::HeadKind::O2o, None, 100).unwrap();
    println!("eval of 200 imgs: {:.2} s, ap50={:.3}", t0.elapsed().as_secs_f64(), r.ap50);
}
