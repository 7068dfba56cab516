use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Algorithm, Layer, LearnerError, LearnerParams};
use crate::autodiff::Tensor;

/// `manifest.json` of a checkpoint directory. The values live in
/// `params.csv` as `param,index,value` rows, in the order of `parameters`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub algorithm: Algorithm,
    pub layer_widths: Vec<usize>,
    pub head_width: Option<usize>,
    pub adaptation_rate: f64,
    pub adaptation_steps: usize,
    pub parameters: Vec<ParamEntry>,
    pub num_params: usize,
    #[serde(default)]
    pub iteration: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

fn err(path: &Path, msg: impl Into<String>) -> LearnerError {
    LearnerError::Checkpoint {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn save_checkpoint(
    params: &LearnerParams,
    dir: &Path,
    iteration: Option<usize>,
) -> Result<(), LearnerError> {
    fs::create_dir_all(dir).map_err(|e| err(dir, e.to_string()))?;
    let tensors = params.tensors();
    let mut widths = vec![params.input_dim()];
    widths.extend(params.encoder.iter().map(Layer::fan_out));
    let manifest = CheckpointManifest {
        algorithm: params.algorithm,
        layer_widths: widths,
        head_width: params.head.as_ref().map(Layer::fan_out),
        adaptation_rate: params.adaptation_rate,
        adaptation_steps: params.adaptation_steps,
        parameters: tensors
            .iter()
            .map(|(name, t)| ParamEntry {
                name: name.clone(),
                shape: t.shape().to_vec(),
            })
            .collect(),
        num_params: params.num_params(),
        iteration,
    };
    let mpath = dir.join("manifest.json");
    let json = serde_json::to_string_pretty(&manifest).map_err(|e| err(&mpath, e.to_string()))?;
    fs::write(&mpath, json).map_err(|e| err(&mpath, e.to_string()))?;

    let mut csv = String::from("param,index,value\n");
    for (name, t) in &tensors {
        for (i, v) in t.data().iter().enumerate() {
            csv.push_str(&format!("{name},{i},{v}\n"));
        }
    }
    let ppath = dir.join("params.csv");
    fs::write(&ppath, csv).map_err(|e| err(&ppath, e.to_string()))
}

pub fn load_checkpoint(dir: &Path) -> Result<(LearnerParams, CheckpointManifest), LearnerError> {
    let mpath = dir.join("manifest.json");
    let text = fs::read_to_string(&mpath).map_err(|e| err(&mpath, e.to_string()))?;
    let manifest: CheckpointManifest =
        serde_json::from_str(&text).map_err(|e| err(&mpath, e.to_string()))?;
    if manifest.layer_widths.len() < 2 {
        return Err(err(&mpath, "need at least one encoder layer"));
    }
    if manifest.algorithm.has_head() != manifest.head_width.is_some() {
        return Err(err(&mpath, "head presence does not match the algorithm"));
    }

    let ppath = dir.join("params.csv");
    let text = fs::read_to_string(&ppath).map_err(|e| err(&ppath, e.to_string()))?;
    let mut lines = text.lines();
    if lines.next() != Some("param,index,value") {
        return Err(err(&ppath, "line 1: expected header `param,index,value`"));
    }
    let mut values: Vec<(String, Vec<f64>)> = Vec::new();
    for (n, line) in lines.enumerate() {
        let lineno = n + 2;
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(err(&ppath, format!("line {lineno}: expected 3 fields, got {}", fields.len())));
        }
        let index: usize = fields[1]
            .parse()
            .map_err(|_| err(&ppath, format!("line {lineno}, field 2: bad index `{}`", fields[1])))?;
        let value: f64 = fields[2]
            .parse()
            .map_err(|_| err(&ppath, format!("line {lineno}, field 3: bad value `{}`", fields[2])))?;
        if values.last().map(|(name, _)| name.as_str()) != Some(fields[0]) {
            values.push((fields[0].to_string(), Vec::new()));
        }
        let slot = &mut values.last_mut().expect("just pushed").1;
        if index != slot.len() {
            return Err(err(&ppath, format!("line {lineno}: index {index} out of order")));
        }
        slot.push(value);
    }
    if values.len() != manifest.parameters.len() {
        return Err(err(
            &ppath,
            format!("{} tensors listed, manifest has {}", values.len(), manifest.parameters.len()),
        ));
    }
    let mut tensors = Vec::with_capacity(values.len());
    for ((name, data), entry) in values.into_iter().zip(&manifest.parameters) {
        if name != entry.name {
            return Err(err(&ppath, format!("found `{name}` where `{}` was expected", entry.name)));
        }
        let t = Tensor::new(entry.shape.clone(), data)
            .map_err(|e| err(&ppath, format!("{name}: {e}")))?;
        tensors.push(t);
    }

    let mut it = tensors.into_iter();
    let mut take = |what: &str, shape: &[usize]| -> Result<Tensor, LearnerError> {
        let t = it.next().ok_or_else(|| err(&mpath, format!("missing {what}")))?;
        if t.shape() != shape {
            return Err(err(&mpath, format!("{what} has shape {:?}, expected {shape:?}", t.shape())));
        }
        Ok(t)
    };
    let mut encoder = Vec::new();
    for w in manifest.layer_widths.windows(2) {
        encoder.push(Layer {
            weight: take("encoder weight", &[w[0], w[1]])?,
            bias: take("encoder bias", &[1, w[1]])?,
        });
    }
    let embed = *manifest.layer_widths.last().expect("checked");
    let head = match manifest.head_width {
        Some(n) => Some(Layer {
            weight: take("head weight", &[embed, n])?,
            bias: take("head bias", &[1, n])?,
        }),
        None => None,
    };
    let cosine_scale = if manifest.algorithm == Algorithm::ProtoCosine {
        Some(take("cosine scale", &[])?.item())
    } else {
        None
    };
    let params = LearnerParams {
        algorithm: manifest.algorithm,
        encoder,
        head,
        cosine_scale,
        adaptation_rate: manifest.adaptation_rate,
        adaptation_steps: manifest.adaptation_steps,
    };
    if params.num_params() != manifest.num_params {
        return Err(err(&mpath, "num_params does not match the stored tensors"));
    }
    Ok((params, manifest))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learners::LearnerConfig;
    use crate::rng::Stream;

    #[test]
    fn round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for alg in [
            Algorithm::ProtoEuclidean,
            Algorithm::ProtoCosine,
            Algorithm::Maml,
            Algorithm::Anil,
        ] {
            let mut cfg = LearnerConfig::new(alg, 6);
            cfg.hidden = vec![7];
            cfg.embed_dim = 5;
            let p = LearnerParams::init(&cfg, &mut Stream::new(9)).unwrap();
            let path = dir.path().join(alg.name());
            save_checkpoint(&p, &path, Some(42)).unwrap();
            let (back, manifest) = load_checkpoint(&path).unwrap();
            assert_eq!(back, p);
            assert_eq!(manifest.iteration, Some(42));
        }
    }

    #[test]
    fn corrupt_value_reports_location() {
        let dir = tempfile::tempdir().unwrap();
        let p = LearnerParams::init(&LearnerConfig::new(Algorithm::ProtoEuclidean, 2), &mut Stream::new(0))
            .unwrap();
        save_checkpoint(&p, dir.path(), None).unwrap();
        let csv = dir.path().join("params.csv");
        let text = fs::read_to_string(&csv).unwrap().replacen("encoder.0.weight,0,", "encoder.0.weight,0,x", 1);
        fs::write(&csv, text).unwrap();
        let msg = load_checkpoint(dir.path()).unwrap_err().to_string();
        assert!(msg.contains("line 2, field 3"), "{msg}");
    }
}
