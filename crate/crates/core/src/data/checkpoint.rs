//! Named-tensor checkpoints.
//!
//! A checkpoint at `path` is two files: `path` holds the tensors as
//! back-to-back embedding-format blocks, and `path.index` lists one tensor per
//! line as `name rows cols offset`, where `offset` is the byte position of
//! the block's header in `path`.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::io::{decode_embeddings_prefix, encode_embeddings};
use crate::head::TaskClassifier;
use crate::model::UfdModel;
use crate::nn::{LinearLayer, Matrix};
use crate::{Error, Result};

pub fn index_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".index");
    PathBuf::from(s)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub value: Matrix,
}

pub fn save_tensors(path: impl AsRef<Path>, tensors: &[(&str, &Matrix)]) -> Result<()> {
    let path = path.as_ref();
    let mut blob = Vec::new();
    let mut index = String::new();
    for (name, m) in tensors {
        if name.is_empty() || name.contains(char::is_whitespace) {
            return Err(Error::InvalidArgument(format!("bad tensor name {name:?}")));
        }
        writeln!(index, "{name} {} {} {}", m.rows(), m.cols(), blob.len()).expect("String write");
        blob.extend(encode_embeddings(m)?);
    }
    fs::write(path, blob).map_err(|e| Error::io(path, e))?;
    let ipath = index_path(path);
    fs::write(&ipath, index).map_err(|e| Error::io(&ipath, e))
}

pub fn load_tensors(path: impl AsRef<Path>) -> Result<Vec<Tensor>> {
    let path = path.as_ref();
    let ipath = index_path(path);
    let blob = fs::read(path).map_err(|e| Error::io(path, e))?;
    let index = fs::read_to_string(&ipath).map_err(|e| Error::io(&ipath, e))?;
    let mut out = Vec::new();
    let mut expected_offset = 0usize;
    for (lineno, line) in index.lines().enumerate() {
        let bad = |why: &str| Error::format(&ipath, format!("line {}: {why}", lineno + 1));
        let fields: Vec<&str> = line.split_whitespace().collect();
        let [name, rows, cols, offset] = fields[..] else {
            return Err(bad("expected `name rows cols offset`"));
        };
        let parse = |s: &str| {
            s.parse::<usize>()
                .map_err(|_| bad(&format!("{s:?} is not a count")))
        };
        let (rows, cols, offset) = (parse(rows)?, parse(cols)?, parse(offset)?);
        if offset != expected_offset {
            return Err(bad(&format!("offset {offset}, expected {expected_offset}")));
        }
        let slice = blob.get(offset..).ok_or_else(|| bad("offset past end of data"))?;
        let (value, used) = decode_embeddings_prefix(slice, path)?;
        if value.shape() != (rows, cols) {
            return Err(bad(&format!(
                "index says {rows} x {cols}, data holds {} x {}",
                value.rows(),
                value.cols()
            )));
        }
        expected_offset += used;
        out.push(Tensor {
            name: name.to_string(),
            value,
        });
    }
    if expected_offset != blob.len() {
        return Err(Error::format(
            path,
            format!("{} bytes not covered by the index", blob.len() - expected_offset),
        ));
    }
    Ok(out)
}

fn take(tensors: &mut Vec<Tensor>, name: &str, origin: &Path) -> Result<Matrix> {
    let pos = tensors
        .iter()
        .position(|t| t.name == name)
        .ok_or_else(|| Error::format(origin, format!("missing tensor {name}")))?;
    Ok(tensors.swap_remove(pos).value)
}

fn assign(layer: &mut LinearLayer, weight: Matrix, bias: Matrix, name: &str) -> Result<()> {
    if weight.shape() != layer.weight.shape() || bias.shape() != layer.bias.shape() {
        return Err(Error::dims(
            "checkpoint",
            format!(
                "{name} weight {:?} bias {:?}",
                layer.weight.shape(),
                layer.bias.shape()
            ),
            format!("weight {:?} bias {:?}", weight.shape(), bias.shape()),
        ));
    }
    layer.weight = weight;
    layer.bias = bias;
    layer.zero_grads();
    Ok(())
}

fn layer_tensors<'a>(names: &[&str], layers: &[&'a LinearLayer]) -> Vec<(String, &'a Matrix)> {
    names
        .iter()
        .zip(layers)
        .flat_map(|(n, l)| [(format!("{n}.weight"), &l.weight), (format!("{n}.bias"), &l.bias)])
        .collect()
}

fn save_named(path: &Path, named: &[(String, &Matrix)]) -> Result<()> {
    let refs: Vec<(&str, &Matrix)> = named.iter().map(|(n, m)| (n.as_str(), *m)).collect();
    save_tensors(path, &refs)
}

/// Writes every parameter tensor of `model`. Optimizer state is not saved.
pub fn save_ufd(path: impl AsRef<Path>, model: &UfdModel) -> Result<()> {
    save_named(
        path.as_ref(),
        &layer_tensors(&UfdModel::LAYER_NAMES, &model.layers()),
    )
}

pub fn load_ufd(path: impl AsRef<Path>, learning_rate: f64) -> Result<UfdModel> {
    let path = path.as_ref();
    let mut tensors = load_tensors(path)?;
    let first = take(&mut tensors, "f_s.layer1.weight", path)?;
    let d = first.cols();
    let mut model = UfdModel::zeros(d, learning_rate);
    let mut pending = Some(first);
    for (name, layer) in UfdModel::LAYER_NAMES.iter().zip(model.layers_mut()) {
        let weight = match pending.take() {
            Some(w) => w,
            None => take(&mut tensors, &format!("{name}.weight"), path)?,
        };
        let bias = take(&mut tensors, &format!("{name}.bias"), path)?;
        assign(layer, weight, bias, name)?;
    }
    if let Some(extra) = tensors.first() {
        return Err(Error::format(path, format!("unexpected tensor {}", extra.name)));
    }
    Ok(model)
}

pub fn save_classifier(path: impl AsRef<Path>, clf: &TaskClassifier) -> Result<()> {
    let mut named = Vec::new();
    if let Some(c) = clf.combiner() {
        named.extend(layer_tensors(&["combiner"], &[c]));
    }
    named.extend(layer_tensors(&["output"], &[clf.output()]));
    save_named(path.as_ref(), &named)
}

pub fn load_classifier(path: impl AsRef<Path>, learning_rate: f64) -> Result<TaskClassifier> {
    let path = path.as_ref();
    let mut tensors = load_tensors(path)?;
    let to_layer = |tensors: &mut Vec<Tensor>, name: &str| -> Result<LinearLayer> {
        let weight = take(tensors, &format!("{name}.weight"), path)?;
        let bias = take(tensors, &format!("{name}.bias"), path)?;
        if bias.rows() != 1 {
            return Err(Error::format(path, format!("{name}.bias must be a single row")));
        }
        LinearLayer::from_parts(weight, bias.data())
    };
    let combiner = if tensors.iter().any(|t| t.name.starts_with("combiner.")) {
        Some(to_layer(&mut tensors, "combiner")?)
    } else {
        None
    };
    let output = to_layer(&mut tensors, "output")?;
    if let Some(extra) = tensors.first() {
        return Err(Error::format(path, format!("unexpected tensor {}", extra.name)));
    }
    TaskClassifier::from_layers(combiner, output, learning_rate)
}
