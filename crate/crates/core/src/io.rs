//! Network and query files.
//!
//! Networks are read from JSON (see [`Network`]) or from the ACAS-Xu `.nnet`
//! text format. Only JSON is written. The `.nnet` header carries input
//! normalization constants (min, max, means, ranges); they are parsed for
//! well-formedness and then ignored, so the loaded network operates on raw
//! (already normalized) inputs.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Activation, InputBox, Layer, Network, OutputProperty, Query};

/// On-disk form of a query property file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PropertyFile {
    pub input_lower: Vec<f64>,
    pub input_upper: Vec<f64>,
    pub output_threshold: f64,
}

impl PropertyFile {
    pub fn from_parts(input: &InputBox, output: OutputProperty) -> Self {
        Self {
            input_lower: input.lower.clone(),
            input_upper: input.upper.clone(),
            output_threshold: output.threshold,
        }
    }

    pub fn into_parts(self) -> Result<(InputBox, OutputProperty)> {
        let input = InputBox::new(self.input_lower, self.input_upper)?;
        if !self.output_threshold.is_finite() {
            return Err(Error::InvalidQuery("output threshold is not finite".into()));
        }
        Ok((input, OutputProperty::new(self.output_threshold)))
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Loads a network, choosing the format by extension (`.nnet` or JSON).
pub fn load_network(path: impl AsRef<Path>) -> Result<Network> {
    let path = path.as_ref();
    let text = read(path)?;
    let is_nnet = path
        .extension()
        .map(|e| e.eq_ignore_ascii_case("nnet"))
        .unwrap_or(false);
    if is_nnet {
        parse_nnet(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path, message),
            other => other,
        })
    } else {
        network_from_json(&text).map_err(|e| match e {
            Error::Parse { message, .. } => Error::parse(path, message),
            other => other,
        })
    }
}

pub fn network_from_json(text: &str) -> Result<Network> {
    serde_json::from_str(text).map_err(|e| {
        // Validation failures surface through serde as custom errors.
        if e.is_data() && e.to_string().starts_with("invalid network") {
            Error::InvalidNetwork(
                e.to_string()
                    .trim_start_matches("invalid network: ")
                    .to_string(),
            )
        } else {
            Error::parse("<json>", e.to_string())
        }
    })
}

pub fn network_to_json(net: &Network) -> String {
    serde_json::to_string_pretty(net).expect("network serialization cannot fail")
}

pub fn save_network(net: &Network, path: impl AsRef<Path>) -> Result<()> {
    let mut text = network_to_json(net);
    text.push('\n');
    write(path.as_ref(), &text)
}

pub fn load_property(path: impl AsRef<Path>) -> Result<PropertyFile> {
    let path = path.as_ref();
    let text = read(path)?;
    serde_json::from_str(&text).map_err(|e| Error::parse(path, e.to_string()))
}

pub fn save_property(prop: &PropertyFile, path: impl AsRef<Path>) -> Result<()> {
    let mut text = serde_json::to_string_pretty(prop).expect("property serialization");
    text.push('\n');
    write(path.as_ref(), &text)
}

/// Loads the property file at `prop` and pairs it with the network at `net`.
pub fn load_query(net: impl AsRef<Path>, prop: impl AsRef<Path>) -> Result<Query> {
    let network = load_network(net)?;
    let (input, output) = load_property(prop)?.into_parts()?;
    Query::new(network, input, output)
}

/// Parses the ACAS-Xu `.nnet` format.
///
/// Layout after optional `//` comment lines: counts line
/// (`layers, inputs, outputs, max_layer_size`), layer sizes, a legacy flag
/// line, four normalization lines, then per layer one line per weight row
/// followed by one line per bias. Hidden layers are ReLU, the last is affine.
pub fn parse_nnet(text: &str) -> Result<Network> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with("//"));

    let mut next_numbers = |what: &str| -> Result<(usize, Vec<f64>)> {
        let (lineno, line) = lines.next().ok_or_else(|| {
            Error::parse("<nnet>", format!("unexpected end of file reading {what}"))
        })?;
        let nums = line
            .split(',')
            .map(str::trim)
            .filter(|t| !t.is_empty())
            .map(|t| {
                t.parse::<f64>().map_err(|_| {
                    Error::parse(
                        "<nnet>",
                        format!("line {lineno}: bad number {t:?} in {what}"),
                    )
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok((lineno, nums))
    };

    let as_count = |v: f64, lineno: usize, what: &str| -> Result<usize> {
        if v >= 0.0 && v.fract() == 0.0 {
            Ok(v as usize)
        } else {
            Err(Error::parse(
                "<nnet>",
                format!("line {lineno}: {what} must be a nonnegative integer"),
            ))
        }
    };

    let (lineno, header) = next_numbers("header")?;
    if header.len() < 3 {
        return Err(Error::parse(
            "<nnet>",
            format!("line {lineno}: header needs layer count, input size and output size"),
        ));
    }
    let num_layers = as_count(header[0], lineno, "layer count")?;
    let (lineno, sizes) = next_numbers("layer sizes")?;
    if sizes.len() < num_layers + 1 {
        return Err(Error::parse(
            "<nnet>",
            format!(
                "line {lineno}: expected {} layer sizes, found {}",
                num_layers + 1,
                sizes.len()
            ),
        ));
    }
    let sizes = sizes[..num_layers + 1]
        .iter()
        .map(|&s| as_count(s, lineno, "layer size"))
        .collect::<Result<Vec<_>>>()?;
    if as_count(header[1], lineno, "input size")? != sizes[0] {
        return Err(Error::parse(
            "<nnet>",
            "input size disagrees with layer sizes",
        ));
    }
    if as_count(header[2], lineno, "output size")? != sizes[num_layers] {
        return Err(Error::parse(
            "<nnet>",
            "output size disagrees with layer sizes",
        ));
    }

    // Legacy symmetric flag and normalization constants.
    for what in [
        "symmetric flag",
        "input minimums",
        "input maximums",
        "means",
        "ranges",
    ] {
        next_numbers(what)?;
    }

    let mut layers = Vec::with_capacity(num_layers);
    for i in 0..num_layers {
        let (rows, cols) = (sizes[i + 1], sizes[i]);
        let mut weights = Vec::with_capacity(rows);
        for r in 0..rows {
            let (lineno, row) = next_numbers(&format!("layer {i} weight row {r}"))?;
            if row.len() != cols {
                return Err(Error::parse(
                    "<nnet>",
                    format!(
                        "line {lineno}: layer {i} row {r} has {} weights, expected {cols}",
                        row.len()
                    ),
                ));
            }
            weights.push(row);
        }
        let mut biases = Vec::with_capacity(rows);
        for r in 0..rows {
            let (lineno, b) = next_numbers(&format!("layer {i} bias {r}"))?;
            if b.len() != 1 {
                return Err(Error::parse(
                    "<nnet>",
                    format!("line {lineno}: expected a single bias value"),
                ));
            }
            biases.push(b[0]);
        }
        let activation = if i + 1 == num_layers {
            Activation::None
        } else {
            Activation::Relu
        };
        layers.push(Layer::new(weights, biases, activation));
    }
    Network::new(sizes[0], layers)
}
