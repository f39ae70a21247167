//! Trained selector on disk: network, feature scaler and (optionally) margins.
//!
//! The format is line oriented, one `key value...` field per line:
//!
//! ```text
//! mimo-select-model 1
//! stage first
//! activation sigmoid
//! layers 3 8 5
//! features 0 2 1
//! scaler_mean ...
//! scaler_std ...
//! theta ...
//! margins 0.12 0.05 0 0.3
//! gamma 0.01
//! ```
//!
//! `margins` and `gamma` are absent before calibration. Floats are written in
//! shortest round-trip form, so a load reproduces every value exactly.

use std::fmt::Write as _;
use std::path::Path;

use crate::dataset::Scaler;
use crate::error::{Error, Result};
use crate::features::{FeatureVector, NUM_FEATURES};
use crate::mlp::{Activation, MlpParams, OpCount};
use crate::selection::{self, Margins};

pub const MODEL_MAGIC: &str = "mimo-select-model";
pub const MODEL_VERSION: &str = "1";

/// Where a model sits in the train → calibrate → retrain pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    /// First training; margins are attached after calibration.
    First,
    /// Trained on relabeled data; used with plain argmax.
    Retrained,
}

impl Stage {
    pub fn name(self) -> &'static str {
        match self {
            Stage::First => "first",
            Stage::Retrained => "retrained",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        match s {
            "first" => Some(Stage::First),
            "retrained" => Some(Stage::Retrained),
            _ => None,
        }
    }
}

/// How a model turns its outputs into a detector online.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OnlineRule {
    Argmax,
    Reliable,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub stage: Stage,
    pub activation: Activation,
    pub params: MlpParams,
    pub scaler: Scaler,
    pub margins: Option<Margins>,
}

impl Model {
    pub fn new(stage: Stage, activation: Activation, params: MlpParams, scaler: Scaler) -> Result<Self> {
        if scaler.dim() != params.inputs {
            return Err(Error::InvalidArgument(format!(
                "scaler has {} features, network {} inputs",
                scaler.dim(),
                params.inputs
            )));
        }
        Ok(Model {
            stage,
            activation,
            params,
            scaler,
            margins: None,
        })
    }

    /// A first-stage model that has not been calibrated yet.
    pub fn needs_margins(&self) -> bool {
        self.stage == Stage::First && self.margins.is_none()
    }

    pub fn online_rule(&self) -> OnlineRule {
        match (self.stage, &self.margins) {
            (Stage::First, Some(_)) => OnlineRule::Reliable,
            _ => OnlineRule::Argmax,
        }
    }

    /// Reusable buffers so that per-RE selection does not allocate.
    pub fn workspace(&self) -> Workspace {
        Workspace {
            input: vec![0.0; self.params.inputs],
            hidden: vec![0.0; self.params.hidden],
            logits: vec![0.0; self.params.outputs],
        }
    }

    /// 1-based detector index for one RE, with the network's operation count.
    pub fn select(&self, g: &FeatureVector, ws: &mut Workspace) -> (usize, OpCount) {
        self.scaler.transform_into(g, &mut ws.input);
        let ops = self
            .params
            .logits_into(self.activation, &ws.input, &mut ws.hidden, &mut ws.logits);
        let d = match (self.online_rule(), &self.margins) {
            (OnlineRule::Reliable, Some(m)) => {
                let r = crate::mlp::softmax(&ws.logits);
                selection::select_reliable(&r, m)
            }
            // softmax is monotone, so the logits' argmax is the outputs' argmax
            _ => selection::select_argmax(&ws.logits),
        };
        (d, ops)
    }

    pub fn to_text(&self) -> String {
        let p = &self.params;
        let mut s = String::new();
        let list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(" ");
        let _ = writeln!(s, "{MODEL_MAGIC} {MODEL_VERSION}");
        let _ = writeln!(s, "stage {}", self.stage.name());
        let _ = writeln!(s, "activation {}", self.activation.name());
        let _ = writeln!(s, "layers {} {} {}", p.inputs, p.hidden, p.outputs);
        let feats: Vec<String> = self.scaler.features.iter().map(|f| f.to_string()).collect();
        let _ = writeln!(s, "features {}", feats.join(" "));
        let _ = writeln!(s, "scaler_mean {}", list(&self.scaler.mean));
        let _ = writeln!(s, "scaler_std {}", list(&self.scaler.std));
        let _ = writeln!(s, "theta {}", list(&p.theta));
        if let Some(m) = &self.margins {
            let _ = writeln!(s, "margins {}", list(&m.delta));
            let _ = writeln!(s, "gamma {:?}", m.gamma);
        }
        s
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l.trim())).filter(|(_, l)| !l.is_empty());
        let (_, header) = lines.next().ok_or_else(|| Error::parse(path, 1, "empty model file"))?;
        match header.split_once(' ') {
            Some((MODEL_MAGIC, v)) if v == MODEL_VERSION => {}
            Some((MODEL_MAGIC, v)) => {
                return Err(Error::Version {
                    found: v.to_string(),
                    expected: MODEL_VERSION.to_string(),
                })
            }
            _ => return Err(Error::parse(path, 1, "not a model file")),
        }

        let mut fields: Vec<(usize, &str, &str)> = Vec::new();
        for (no, line) in lines {
            let (key, rest) = line.split_once(' ').unwrap_or((line, ""));
            if fields.iter().any(|(_, k, _)| *k == key) {
                return Err(Error::parse(path, no, format!("duplicate field '{key}'")));
            }
            fields.push((no, key, rest));
        }
        let find = |key: &str| fields.iter().find(|(_, k, _)| *k == key).map(|&(n, _, v)| (n, v));
        let need = |key: &str| find(key).ok_or_else(|| Error::parse(path, 0, format!("missing field '{key}'")));
        let floats = |(no, v): (usize, &str)| -> Result<Vec<f64>> {
            v.split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .ok()
                        .filter(|x| x.is_finite())
                        .ok_or_else(|| Error::parse(path, no, format!("bad number '{t}'")))
                })
                .collect()
        };
        let ints = |(no, v): (usize, &str)| -> Result<Vec<usize>> {
            v.split_whitespace()
                .map(|t| t.parse::<usize>().map_err(|_| Error::parse(path, no, format!("bad integer '{t}'"))))
                .collect()
        };

        let (no, stage) = need("stage")?;
        let stage = Stage::parse(stage).ok_or_else(|| Error::parse(path, no, format!("unknown stage '{stage}'")))?;
        let (no, act) = need("activation")?;
        let activation = Activation::parse(act).map_err(|e| Error::parse(path, no, e.to_string()))?;
        let layers_field = need("layers")?;
        let layers = ints(layers_field)?;
        let [inputs, hidden, outputs] = layers[..] else {
            return Err(Error::parse(path, layers_field.0, "layers needs three sizes"));
        };
        if inputs == 0 || hidden == 0 || outputs < 2 {
            return Err(Error::parse(path, layers_field.0, "degenerate layer sizes"));
        }
        let feat_field = need("features")?;
        let features = ints(feat_field)?;
        if features.len() != inputs || features.iter().any(|&f| f >= NUM_FEATURES) {
            return Err(Error::parse(path, feat_field.0, "feature list does not match the input layer"));
        }
        let mean_field = need("scaler_mean")?;
        let mean = floats(mean_field)?;
        let std_field = need("scaler_std")?;
        let std = floats(std_field)?;
        if mean.len() != inputs {
            return Err(Error::parse(path, mean_field.0, "scaler_mean has the wrong length"));
        }
        if std.len() != inputs || std.iter().any(|&s| !(s > 0.0)) {
            return Err(Error::parse(path, std_field.0, "scaler_std has the wrong length or a non-positive entry"));
        }
        let theta_field = need("theta")?;
        let theta = floats(theta_field)?;
        let params = MlpParams::from_theta(inputs, hidden, outputs, theta)
            .map_err(|e| Error::parse(path, theta_field.0, e.to_string()))?;
        let margins = match (find("margins"), find("gamma")) {
            (None, None) => None,
            (Some(mf), Some(gf)) => {
                let delta = floats(mf)?;
                if delta.len() != outputs - 1 {
                    return Err(Error::parse(path, mf.0, "margins need one entry per class but the last"));
                }
                let gamma = floats(gf)?;
                let [gamma] = gamma[..] else {
                    return Err(Error::parse(path, gf.0, "gamma takes one value"));
                };
                Some(Margins::new(delta, gamma).map_err(|e| Error::parse(path, mf.0, e.to_string()))?)
            }
            (Some((no, _)), None) | (None, Some((no, _))) => {
                return Err(Error::parse(path, no, "margins and gamma go together"))
            }
        };
        Ok(Model {
            stage,
            activation,
            params,
            scaler: Scaler { features, mean, std },
            margins,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Workspace {
    input: Vec<f64>,
    hidden: Vec<f64>,
    logits: Vec<f64>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn model(seed: u64) -> Model {
        let scaler = Scaler {
            features: vec![0, 2, 1],
            mean: vec![0.3, -1.0 / 3.0, 2.5],
            std: vec![1.1, 0.7, 0.1 + 0.2],
        };
        Model::new(Stage::First, Activation::Sigmoid, MlpParams::init(3, 8, 5, seed), scaler).unwrap()
    }

    #[test]
    fn round_trip_is_exact() {
        let mut m = model(1);
        let text = m.to_text();
        let back = Model::parse(&text, Path::new("m")).unwrap();
        assert_eq!(back, m);
        assert!(back.needs_margins());
        assert_eq!(back.online_rule(), OnlineRule::Argmax);

        m.margins = Some(Margins::new(vec![0.1, 0.0, 0.333, 1.0], 0.01).unwrap());
        let back = Model::parse(&m.to_text(), Path::new("m")).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.online_rule(), OnlineRule::Reliable);

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            let g: Vec<f64> = (0..3).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let a = m.params.forward(m.activation, &g);
            let b = back.params.forward(back.activation, &g);
            for (x, y) in a.probs.iter().zip(&b.probs) {
                assert!((x - y).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn corrupted_files_are_rejected() {
        let text = model(3).to_text();
        let p = Path::new("m");
        let bad_layers = text.replace("layers 3 8 5", "layers 3 9 5");
        assert!(matches!(Model::parse(&bad_layers, p), Err(Error::Parse { .. })));
        let bad_version = text.replace("mimo-select-model 1", "mimo-select-model 7");
        assert!(matches!(Model::parse(&bad_version, p), Err(Error::Version { .. })));
        let no_theta: String = text.lines().filter(|l| !l.starts_with("theta")).map(|l| format!("{l}\n")).collect();
        assert!(Model::parse(&no_theta, p).is_err());
        let lonely_gamma = format!("{text}gamma 0.01\n");
        assert!(Model::parse(&lonely_gamma, p).is_err());
    }

    #[test]
    fn retrained_models_use_argmax() {
        let mut m = model(4);
        m.stage = Stage::Retrained;
        assert_eq!(m.online_rule(), OnlineRule::Argmax);
        assert!(!m.needs_margins());
        let mut ws = m.workspace();
        let g = FeatureVector([1.0, 2.0, 0.5, 3.0, 4.0, 1.0, 0.2]);
        let (d, ops) = m.select(&g, &mut ws);
        let probs = m.params.forward(m.activation, &m.scaler.transform(&g)).probs;
        assert_eq!(d, selection::select_argmax(&probs));
        assert_eq!((ops.multiplications, ops.additions), (64, 77));
    }
}
