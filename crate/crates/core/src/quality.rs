//! L2-regularised logistic regression over content features, with a
//! margin-based uncertainty score for query selection.

use std::fmt::Write as _;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::clustering::Standardization;
use crate::content::{ContentFeatures, FEATURE_COUNT, FEATURE_NAMES};
use crate::dataset::Label;

const MAGIC: &str = "cpforge-model v1";
const END: &str = "end";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Hyper {
    pub l2: f64,
    pub lr: f64,
    pub epochs: usize,
}

impl Default for Hyper {
    fn default() -> Self {
        Hyper {
            l2: 0.01,
            lr: 0.1,
            epochs: 300,
        }
    }
}

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("SingleClass: training set needs at least one accept and one reject")]
    SingleClass,
    #[error("ParseError: {0}")]
    Parse(String),
    #[error("MissingField: {0}")]
    MissingField(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub struct QualityModel {
    pub weights: [f64; FEATURE_COUNT],
    pub bias: f64,
    pub standardization: Standardization,
    pub hyper: Hyper,
}

/// Decision values are clamped to this magnitude before the logistic so
/// probabilities never round to exactly 0 or 1.
const DECISION_LIMIT: f64 = 30.0;

#[inline]
pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

/// `ln(1 + e^z)` without overflow.
#[inline]
fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

/// Standardised design matrix with 0/1 targets.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    pub x: Vec<[f64; FEATURE_COUNT]>,
    pub y: Vec<f64>,
}

impl TrainingSet {
    pub fn new(standardization: &Standardization, labeled: &[(ContentFeatures, Label)]) -> Self {
        let x = labeled
            .iter()
            .map(|(f, _)| {
                let z = standardization.apply(&f.to_vec());
                std::array::from_fn(|i| z[i])
            })
            .collect();
        let y = labeled
            .iter()
            .map(|(_, l)| if l.is_accept() { 1.0 } else { 0.0 })
            .collect();
        TrainingSet { x, y }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    /// Mean log-loss of the logistic model `(w, b)`, without the penalty.
    pub fn log_loss(&self, w: &[f64; FEATURE_COUNT], b: f64) -> f64 {
        let n = self.len().max(1) as f64;
        self.x
            .iter()
            .zip(&self.y)
            .map(|(x, &y)| {
                let z = dot(w, x) + b;
                // -[y ln s(z) + (1-y) ln(1-s(z))]
                softplus(z) - y * z
            })
            .sum::<f64>()
            / n
    }

    /// Regularised objective `log_loss + (l2 / 2) |w|^2`; the bias is not penalised.
    pub fn objective(&self, w: &[f64; FEATURE_COUNT], b: f64, l2: f64) -> f64 {
        self.log_loss(w, b) + 0.5 * l2 * dot(w, w)
    }

    /// Gradient of the unpenalised log-loss with respect to `(w, b)`.
    pub fn log_loss_gradient(&self, w: &[f64; FEATURE_COUNT], b: f64) -> ([f64; FEATURE_COUNT], f64) {
        let n = self.len().max(1) as f64;
        let mut gw = [0.0; FEATURE_COUNT];
        let mut gb = 0.0;
        for (x, &y) in self.x.iter().zip(&self.y) {
            let r = sigmoid(dot(w, x) + b) - y;
            for (g, xi) in gw.iter_mut().zip(x) {
                *g += r * xi;
            }
            gb += r;
        }
        gw.iter_mut().for_each(|g| *g /= n);
        (gw, gb / n)
    }

    /// Gradient of [`objective`](Self::objective).
    pub fn gradient(&self, w: &[f64; FEATURE_COUNT], b: f64, l2: f64) -> ([f64; FEATURE_COUNT], f64) {
        let (mut gw, gb) = self.log_loss_gradient(w, b);
        for (g, wi) in gw.iter_mut().zip(w) {
            *g += l2 * wi;
        }
        (gw, gb)
    }
}

#[inline]
fn dot(a: &[f64; FEATURE_COUNT], b: &[f64; FEATURE_COUNT]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

impl QualityModel {
    /// All-zero weights: predicts 0.5 everywhere.
    pub fn zero(hyper: Hyper) -> Self {
        QualityModel {
            weights: [0.0; FEATURE_COUNT],
            bias: 0.0,
            standardization: Standardization::identity(FEATURE_COUNT),
            hyper,
        }
    }

    pub fn decision(&self, f: &ContentFeatures) -> f64 {
        let z = self.standardization.apply(&f.to_vec());
        self.weights.iter().zip(&z).map(|(w, x)| w * x).sum::<f64>() + self.bias
    }

    /// Probability that `f` is acceptable, strictly inside (0, 1).
    pub fn predict(&self, f: &ContentFeatures) -> f64 {
        sigmoid(self.decision(f).clamp(-DECISION_LIMIT, DECISION_LIMIT))
    }

    /// `1 - 2 |p - 0.5|`: 1 at maximal doubt, 0 at certainty.
    pub fn uncertainty(&self, f: &ContentFeatures) -> f64 {
        uncertainty_of(self.predict(f))
    }

    /// Short content hash of the serialised model.
    pub fn id(&self) -> String {
        let digest = Sha256::digest(self.to_text().as_bytes());
        digest.iter().take(8).fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Line-oriented `key value` text, floats in 17-significant-digit scientific notation.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{MAGIC}");
        let _ = writeln!(s, "l2 {:.16e}", self.hyper.l2);
        let _ = writeln!(s, "lr {:.16e}", self.hyper.lr);
        let _ = writeln!(s, "epochs {}", self.hyper.epochs);
        let _ = writeln!(s, "bias {:.16e}", self.bias);
        for (name, w) in FEATURE_NAMES.iter().zip(&self.weights) {
            let _ = writeln!(s, "weight.{name} {w:.16e}");
        }
        for (name, m) in FEATURE_NAMES.iter().zip(&self.standardization.mean) {
            let _ = writeln!(s, "mean.{name} {m:.16e}");
        }
        for (name, sd) in FEATURE_NAMES.iter().zip(&self.standardization.std) {
            let _ = writeln!(s, "std.{name} {sd:.16e}");
        }
        let _ = writeln!(s, "{END}");
        s
    }

    pub fn from_text(text: &str) -> Result<Self, ModelError> {
        let mut lines = text.lines();
        match lines.next() {
            Some(l) if l.trim() == MAGIC => {}
            Some(l) => return Err(ModelError::Parse(format!("bad header {l:?}"))),
            None => return Err(ModelError::Parse("empty model file".into())),
        }
        let mut fields = std::collections::HashMap::new();
        let mut ended = false;
        for (i, line) in lines.enumerate() {
            if ended {
                return Err(ModelError::Parse(format!("line {}: content after `{END}`", i + 2)));
            }
            if line.trim() == END {
                ended = true;
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once(' ')
                .ok_or_else(|| ModelError::Parse(format!("line {}: expected `key value`", i + 2)))?;
            if fields.insert(key.to_string(), value.trim().to_string()).is_some() {
                return Err(ModelError::Parse(format!("duplicate key {key}")));
            }
        }
        if !ended {
            return Err(ModelError::Parse("truncated model file: no `end` line".into()));
        }
        let num = |key: &str| -> Result<f64, ModelError> {
            let v = fields.get(key).ok_or_else(|| ModelError::MissingField(key.to_string()))?;
            v.parse::<f64>()
                .map_err(|_| ModelError::Parse(format!("{key}: not a number: {v:?}")))
        };
        let epochs_raw = fields
            .get("epochs")
            .ok_or_else(|| ModelError::MissingField("epochs".into()))?;
        let epochs = epochs_raw
            .parse::<usize>()
            .map_err(|_| ModelError::Parse(format!("epochs: {epochs_raw:?}")))?;
        let hyper = Hyper {
            l2: num("l2")?,
            lr: num("lr")?,
            epochs,
        };
        let mut weights = [0.0; FEATURE_COUNT];
        let mut mean = vec![0.0; FEATURE_COUNT];
        let mut std = vec![0.0; FEATURE_COUNT];
        for (i, name) in FEATURE_NAMES.iter().enumerate() {
            weights[i] = num(&format!("weight.{name}"))?;
            mean[i] = num(&format!("mean.{name}"))?;
            std[i] = num(&format!("std.{name}"))?;
        }
        let known = 4 + 3 * FEATURE_COUNT;
        if fields.len() != known {
            let extra: Vec<_> = fields
                .keys()
                .filter(|k| {
                    !["l2", "lr", "epochs", "bias"].contains(&k.as_str())
                        && !FEATURE_NAMES.iter().any(|n| {
                            **k == format!("weight.{n}") || **k == format!("mean.{n}") || **k == format!("std.{n}")
                        })
                })
                .collect();
            return Err(ModelError::Parse(format!("unknown keys {extra:?}")));
        }
        Ok(QualityModel {
            weights,
            bias: num("bias")?,
            standardization: Standardization { mean, std },
            hyper,
        })
    }

    pub fn save(&self, path: &Path) -> Result<(), ModelError> {
        std::fs::write(path, self.to_text()).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ModelError> {
        let text = std::fs::read_to_string(path).map_err(|source| ModelError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_text(&text)
    }
}

pub fn uncertainty_of(p: f64) -> f64 {
    1.0 - 2.0 * (p - 0.5).abs()
}

/// Per-epoch objective values recorded while training.
#[derive(Debug, Clone, Default)]
pub struct TrainTrace {
    pub objective: Vec<f64>,
}

/// Trains from zero weights; see [`train_traced`].
pub fn train(labeled: &[(ContentFeatures, Label)], hyper: Hyper) -> Result<QualityModel, ModelError> {
    train_traced(labeled, hyper).map(|(m, _)| m)
}

/// Full-batch gradient descent on the regularised log-loss over features
/// standardised with the training set's own statistics.
///
/// Each epoch takes a gradient step on the log-loss and then applies the L2
/// penalty in closed form, `w <- (w - lr * grad) / (1 + lr * l2)`, so large
/// penalties shrink the weights instead of overshooting.
pub fn train_traced(
    labeled: &[(ContentFeatures, Label)],
    hyper: Hyper,
) -> Result<(QualityModel, TrainTrace), ModelError> {
    let accepts = labeled.iter().filter(|(_, l)| l.is_accept()).count();
    if accepts == 0 || accepts == labeled.len() {
        return Err(ModelError::SingleClass);
    }
    let rows: Vec<[f64; FEATURE_COUNT]> = labeled.iter().map(|(f, _)| f.to_vec()).collect();
    let standardization = Standardization::fit(&rows);
    let data = TrainingSet::new(&standardization, labeled);

    let mut w = [0.0; FEATURE_COUNT];
    let mut b = 0.0;
    let mut trace = TrainTrace {
        objective: Vec::with_capacity(hyper.epochs + 1),
    };
    trace.objective.push(data.objective(&w, b, hyper.l2));
    let shrink = 1.0 / (1.0 + hyper.lr * hyper.l2);
    for _ in 0..hyper.epochs {
        let (gw, gb) = data.log_loss_gradient(&w, b);
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi = (*wi - hyper.lr * g) * shrink;
        }
        b -= hyper.lr * gb;
        trace.objective.push(data.objective(&w, b, hyper.l2));
    }
    Ok((
        QualityModel {
            weights: w,
            bias: b,
            standardization,
            hyper,
        },
        trace,
    ))
}
