//! Versioned JSON checkpoints: model config plus flat parameter arrays.
//! serde_json prints f64 with shortest round-trip precision, so save/load
//! is bit-exact.

use super::{build_model, DetectorError, Model, ModelConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;

pub const CHECKPOINT_SCHEMA: u32 = 1;

#[derive(Serialize, Deserialize)]
struct CheckpointFile {
    schema: u32,
    config: ModelConfig,
    names: Vec<String>,
    shapes: Vec<Vec<usize>>,
    params: Vec<Vec<f64>>,
}

pub fn save_checkpoint(model: &Model, path: &Path) -> Result<(), DetectorError> {
    let file = CheckpointFile {
        schema: CHECKPOINT_SCHEMA,
        config: model.config.clone(),
        names: model.names.clone(),
        shapes: model.params.iter().map(|p| p.shape().to_vec()).collect(),
        params: model.params.iter().map(|p| p.data().to_vec()).collect(),
    };
    let out = std::io::BufWriter::new(std::fs::File::create(path)?);
    serde_json::to_writer(out, &file)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Model, DetectorError> {
    let reader = std::io::BufReader::new(std::fs::File::open(path)?);
    let file: CheckpointFile = serde_json::from_reader(reader)?;
    if file.schema != CHECKPOINT_SCHEMA {
        return Err(DetectorError::CheckpointSchema {
            found: file.schema,
            expected: CHECKPOINT_SCHEMA,
        });
    }
    // The wiring is a pure function of the config; rebuild it and swap in
    // the stored parameters.
    let mut model = build_model(&file.config, 0)?;
    if model.names != file.names {
        return Err(DetectorError::InvalidConfig(
            "checkpoint parameter names do not match its config".into(),
        ));
    }
    for (i, (shape, data)) in file.shapes.iter().zip(file.params).enumerate() {
        if model.params[i].shape() != shape.as_slice() {
            return Err(DetectorError::InvalidConfig(format!(
                "checkpoint parameter {} has shape {:?}, expected {:?}",
                file.names[i],
                shape,
                model.params[i].shape()
            )));
        }
        model.params[i] = crate::tensor::Tensor::new(shape.clone(), data);
    }
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::detector::HeadKind;

    #[test]
    fn roundtrip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        let model = build_model(&ModelConfig::default(), 41).unwrap();
        save_checkpoint(&model, &path).unwrap();
        let loaded = load_checkpoint(&path).unwrap();
        assert_eq!(model.config, loaded.config);
        assert_eq!(model.params.len(), loaded.params.len());
        for (a, b) in model.params.iter().zip(&loaded.params) {
            assert_eq!(a.shape(), b.shape());
            for (x, y) in a.data().iter().zip(b.data()) {
                assert_eq!(x.to_bits(), y.to_bits());
            }
        }
        // Identical inference outputs.
        let image = crate::scenegen::generate_scene(1, &crate::scenegen::SceneConfig::default()).image;
        let a = model.predict(&image, HeadKind::O2o).unwrap();
        let b = loaded.predict(&image, HeadKind::O2o).unwrap();
        assert_eq!(a.cls_logits, b.cls_logits);
    }

    #[test]
    fn schema_mismatch_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.ckpt.json");
        let model = build_model(&ModelConfig::tiny(), 1).unwrap();
        save_checkpoint(&model, &path).unwrap();
        let text = std::fs::read_to_string(&path)
            .unwrap()
            .replacen("\"schema\":1", "\"schema\":9", 1);
        std::fs::write(&path, text).unwrap();
        assert!(matches!(
            load_checkpoint(&path),
            Err(DetectorError::CheckpointSchema { found: 9, .. })
        ));
    }
}
