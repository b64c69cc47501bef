//! Versioned text container of named parameter tensors.
//!
//! ```text
//! tripletrack-checkpoint 1
//! kind metric
//! meta cues A+M
//! tensor id_net.hidden.weight 16 64
//! <one line per row; vectors on a single line>
//! end
//! ```
//!
//! Values use the shortest decimal form that parses back to the same `f64`,
//! so `load(save(m))` reproduces every parameter bit for bit.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use tripletrack_core::appearance::{IdNet, IdNetDims};
use tripletrack_core::metric::{CueEncoder, Cues, MetricNet};
use tripletrack_core::motion::{PredictionNet, PredictionNetDims};
use tripletrack_core::nn::Module;
use tripletrack_core::rng::seeded;
use tripletrack_core::verification::VerificationNet;
use tripletrack_core::Tensor;

use crate::error::{Error, Result};

pub const MAGIC: &str = "tripletrack-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub kind: String,
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_module(kind: &str, meta: BTreeMap<String, String>, module: &dyn Module) -> Self {
        let mut tensors = Vec::new();
        module.visit_params(&mut |name, p| tensors.push((name.to_string(), p.value.clone())));
        Self {
            kind: kind.to_string(),
            meta,
            tensors,
        }
    }

    /// Copies every stored tensor into `module`; names and shapes must match exactly.
    pub fn load_into(&self, module: &mut dyn Module) -> Result<()> {
        let stored: BTreeMap<&str, &Tensor> =
            self.tensors.iter().map(|(n, t)| (n.as_str(), t)).collect();
        let mut seen = 0;
        let mut failure = None;
        module.visit_params_mut(&mut |name, p| {
            if failure.is_some() {
                return;
            }
            match stored.get(name) {
                Some(t) => match p.set_value((*t).clone()) {
                    Ok(()) => seen += 1,
                    Err(e) => {
                        failure = Some(Error::Config(format!("checkpoint tensor {name}: {e}")))
                    }
                },
                None => failure = Some(Error::Config(format!("checkpoint lacks tensor {name}"))),
            }
        });
        if let Some(e) = failure {
            return Err(e);
        }
        if seen != stored.len() {
            return Err(Error::Config(format!(
                "checkpoint holds {} tensors, model expects {seen}",
                stored.len()
            )));
        }
        Ok(())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("{MAGIC} {VERSION}\nkind {}\n", self.kind);
        for (k, v) in &self.meta {
            let _ = writeln!(out, "meta {k} {v}");
        }
        for (name, t) in &self.tensors {
            let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            let _ = writeln!(out, "tensor {name} {}", shape.join(" "));
            for row in t.data().chunks(row_width(t.shape()).max(1)) {
                let line: Vec<String> = row.iter().map(f64::to_string).collect();
                out.push_str(&line.join(" "));
                out.push('\n');
            }
        }
        out.push_str("end\n");
        out
    }

    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));
        let mut next = |what: &str| {
            lines.next().ok_or_else(|| {
                Error::parse(path, 0, format!("unexpected end of file, expected {what}"))
            })
        };
        let (n, header) = next("header")?;
        match header.split_once(' ') {
            Some((MAGIC, v)) if v == VERSION.to_string() => {}
            Some((MAGIC, v)) => {
                return Err(Error::parse(
                    path,
                    n,
                    format!("unsupported checkpoint version {v}"),
                ))
            }
            _ => return Err(Error::parse(path, n, "not a checkpoint file")),
        }
        let (n, kind_line) = next("kind")?;
        let kind = kind_line
            .strip_prefix("kind ")
            .ok_or_else(|| Error::parse(path, n, "expected `kind <name>`"))?
            .to_string();
        let mut meta = BTreeMap::new();
        let mut tensors = Vec::new();
        loop {
            let (n, line) = next("`end`")?;
            if line == "end" {
                break;
            }
            if let Some(rest) = line.strip_prefix("meta ") {
                let (k, v) = rest
                    .split_once(' ')
                    .ok_or_else(|| Error::parse(path, n, "expected `meta <key> <value>`"))?;
                meta.insert(k.to_string(), v.to_string());
                continue;
            }
            let fields: Vec<&str> = line.split(' ').collect();
            let (Some(&"tensor"), Some(&name), true) =
                (fields.first(), fields.get(1), fields.len() > 2)
            else {
                return Err(Error::parse(path, n, format!("unexpected line `{line}`")));
            };
            let shape = fields[2..]
                .iter()
                .map(|s| {
                    s.parse::<usize>()
                        .map_err(|_| Error::parse(path, n, format!("bad tensor dimension `{s}`")))
                })
                .collect::<Result<Vec<usize>>>()?;
            let cols = row_width(&shape);
            let len: usize = shape.iter().product();
            let rows = if cols == 0 { 0 } else { len / cols };
            let mut data = Vec::with_capacity(len);
            for _ in 0..rows {
                let (n, row) = next("tensor row")?;
                let before = data.len();
                for v in row.split(' ').filter(|s| !s.is_empty()) {
                    data.push(
                        v.parse::<f64>()
                            .map_err(|_| Error::parse(path, n, format!("bad value `{v}`")))?,
                    );
                }
                if data.len() - before != cols {
                    return Err(Error::parse(
                        path,
                        n,
                        format!("expected {cols} values, found {}", data.len() - before),
                    ));
                }
            }
            tensors.push((name.to_string(), Tensor::new(&shape, data)?));
        }
        Ok(Self {
            kind,
            meta,
            tensors,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&text, path)
    }

    fn expect_kind(&self, kind: &str) -> Result<()> {
        if self.kind == kind {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "expected a {kind} checkpoint, found {}",
                self.kind
            )))
        }
    }

    fn meta_usize(&self, key: &str) -> Result<usize> {
        self.meta
            .get(key)
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| {
                Error::Config(format!("checkpoint meta `{key}` missing or not an integer"))
            })
    }

    fn meta_cues(&self) -> Result<Cues> {
        match self.meta.get("cues").map(String::as_str) {
            Some("A") => Ok(Cues::Appearance),
            Some("M") => Ok(Cues::Motion),
            Some("A+M") => Ok(Cues::Both),
            other => Err(Error::Config(format!(
                "checkpoint meta `cues` invalid: {other:?}"
            ))),
        }
    }
}

/// Values per text line: the last dimension of a matrix, everything for a vector.
fn row_width(shape: &[usize]) -> usize {
    match shape {
        [_, cols] => *cols,
        _ => shape.iter().product(),
    }
}

fn id_meta(net: &IdNet, meta: &mut BTreeMap<String, String>) {
    let d = net.dims();
    meta.insert("id.descriptor".into(), d.descriptor.to_string());
    meta.insert("id.hidden".into(), d.hidden.to_string());
    meta.insert("id.feature".into(), d.feature.to_string());
    meta.insert("id.classes".into(), d.classes.to_string());
}

fn motion_meta(net: &PredictionNet, meta: &mut BTreeMap<String, String>) {
    let d = net.dims();
    meta.insert("motion.hidden".into(), d.hidden.to_string());
    meta.insert("motion.window".into(), d.window.to_string());
}

fn encoder_meta(encoder: &CueEncoder) -> BTreeMap<String, String> {
    let mut meta = BTreeMap::new();
    id_meta(&encoder.id_net, &mut meta);
    motion_meta(&encoder.prediction_net, &mut meta);
    meta.insert("cues".into(), encoder.cues.label().into());
    meta
}

impl Checkpoint {
    pub fn of_id_net(net: &IdNet) -> Self {
        let mut meta = BTreeMap::new();
        id_meta(net, &mut meta);
        Self::from_module("id", meta, net)
    }

    pub fn of_prediction_net(net: &PredictionNet) -> Self {
        let mut meta = BTreeMap::new();
        motion_meta(net, &mut meta);
        Self::from_module("motion", meta, net)
    }

    pub fn of_metric_net(net: &MetricNet) -> Self {
        let mut meta = encoder_meta(&net.encoder);
        meta.insert("embedding".into(), net.embedding_dim().to_string());
        Self::from_module("metric", meta, net)
    }

    pub fn of_verification_net(net: &VerificationNet) -> Self {
        let mut meta = encoder_meta(&net.encoder);
        meta.insert(
            "verification.hidden".into(),
            net.hidden.outputs().to_string(),
        );
        Self::from_module("verification", meta, net)
    }

    fn id_dims(&self) -> Result<IdNetDims> {
        Ok(IdNetDims {
            descriptor: self.meta_usize("id.descriptor")?,
            hidden: self.meta_usize("id.hidden")?,
            feature: self.meta_usize("id.feature")?,
            classes: self.meta_usize("id.classes")?,
        })
    }

    fn motion_dims(&self) -> Result<PredictionNetDims> {
        Ok(PredictionNetDims {
            hidden: self.meta_usize("motion.hidden")?,
            window: self.meta_usize("motion.window")?,
        })
    }

    fn encoder(&self) -> Result<CueEncoder> {
        let mut rng = seeded(0);
        Ok(CueEncoder::new(
            IdNet::new(self.id_dims()?, &mut rng),
            PredictionNet::new(self.motion_dims()?, &mut rng),
            self.meta_cues()?,
        ))
    }

    pub fn to_id_net(&self) -> Result<IdNet> {
        self.expect_kind("id")?;
        let mut net = IdNet::new(self.id_dims()?, &mut seeded(0));
        self.load_into(&mut net)?;
        Ok(net)
    }

    pub fn to_prediction_net(&self) -> Result<PredictionNet> {
        self.expect_kind("motion")?;
        let mut net = PredictionNet::new(self.motion_dims()?, &mut seeded(0));
        self.load_into(&mut net)?;
        Ok(net)
    }

    pub fn to_metric_net(&self) -> Result<MetricNet> {
        self.expect_kind("metric")?;
        let mut net = MetricNet::new(
            self.encoder()?,
            self.meta_usize("embedding")?,
            &mut seeded(0),
        );
        self.load_into(&mut net)?;
        Ok(net)
    }

    pub fn to_verification_net(&self) -> Result<VerificationNet> {
        self.expect_kind("verification")?;
        let hidden = self.meta_usize("verification.hidden")?;
        let mut net = VerificationNet::new(self.encoder()?, hidden, &mut seeded(0));
        self.load_into(&mut net)?;
        Ok(net)
    }
}
