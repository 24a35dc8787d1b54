//! Output-preserving neuron splitting into sign/direction categories.
//!
//! Each hidden neuron is replaced by up to four copies, one per category of
//! its outgoing edges. A copy keeps the full incoming row and bias of the
//! neuron it was cloned from and carries only the outgoing edges of its own
//! category, so the network function is unchanged. Layers are processed from
//! the output backwards, since a neuron's direction depends on the direction
//! of the neurons it feeds.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::network::{Layer, Network};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Sign {
    Pos,
    Neg,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Inc,
    Dec,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Category {
    pub sign: Sign,
    pub direction: Direction,
}

impl Category {
    pub const POS_INC: Category = Category::new(Sign::Pos, Direction::Inc);
    pub const POS_DEC: Category = Category::new(Sign::Pos, Direction::Dec);
    pub const NEG_INC: Category = Category::new(Sign::Neg, Direction::Inc);
    pub const NEG_DEC: Category = Category::new(Sign::Neg, Direction::Dec);
    pub const ALL: [Category; 4] = [
        Category::POS_INC,
        Category::POS_DEC,
        Category::NEG_INC,
        Category::NEG_DEC,
    ];

    pub const fn new(sign: Sign, direction: Direction) -> Self {
        Self { sign, direction }
    }

    /// Category of an edge of weight `w` into a neuron of direction `target`.
    /// Zero weights fall in the POS bucket.
    pub fn of_edge(w: f64, target: Direction) -> Self {
        let sign = if w >= 0.0 { Sign::Pos } else { Sign::Neg };
        let direction = match (sign, target) {
            (Sign::Pos, d) => d,
            (Sign::Neg, Direction::Inc) => Direction::Dec,
            (Sign::Neg, Direction::Dec) => Direction::Inc,
        };
        Self { sign, direction }
    }

    /// Whether an edge of weight `w` into a `target` neuron is allowed to leave
    /// a neuron of this category.
    pub fn admits_edge(self, w: f64, target: Direction) -> bool {
        let sign_ok = match self.sign {
            Sign::Pos => w >= 0.0,
            Sign::Neg => w <= 0.0,
        };
        let dir_ok = match (self.direction, target) {
            (Direction::Inc, Direction::Inc) | (Direction::Dec, Direction::Dec) => w >= 0.0,
            (Direction::Inc, Direction::Dec) | (Direction::Dec, Direction::Inc) => w <= 0.0,
        };
        sign_ok && dir_ok
    }
}

impl std::fmt::Display for Category {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self.sign {
            Sign::Pos => "pos",
            Sign::Neg => "neg",
        };
        let d = match self.direction {
            Direction::Inc => "inc",
            Direction::Dec => "dec",
        };
        write!(f, "{s}/{d}")
    }
}

/// A network whose hidden neurons each belong to a single category.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CategorizedNetwork {
    pub network: Network,
    /// `categories[layer][neuron]` for every hidden layer.
    pub categories: Vec<Vec<Category>>,
    /// `origin[layer][neuron]` is the index, within the same layer of the
    /// original network, of the neuron this one copies.
    pub origin: Vec<Vec<usize>>,
}

impl CategorizedNetwork {
    pub fn category(&self, layer: usize, neuron: usize) -> Category {
        self.categories[layer][neuron]
    }

    /// Direction of a neuron in layer `layer` of the full layer list; the
    /// output layer is always increasing.
    pub fn direction_of(&self, layer: usize, neuron: usize) -> Direction {
        if layer < self.categories.len() {
            self.categories[layer][neuron].direction
        } else {
            Direction::Inc
        }
    }

    /// Exact sign check of every outgoing edge against its source category.
    pub fn check_edge_invariants(&self) -> Result<()> {
        let layers = self.network.layers();
        for (i, cats) in self.categories.iter().enumerate() {
            let next = &layers[i + 1];
            for (j, cat) in cats.iter().enumerate() {
                for (t, row) in next.weights.iter().enumerate() {
                    let w = row[j];
                    if !cat.admits_edge(w, self.direction_of(i + 1, t)) {
                        return Err(Error::Internal(format!(
                            "edge ({i},{j}) -> ({},{t}) of weight {w} violates category {cat}",
                            i + 1
                        )));
                    }
                }
            }
        }
        Ok(())
    }
}

/// Splits every hidden neuron of a single-output network into categorized copies.
pub fn preprocess(net: &Network) -> Result<CategorizedNetwork> {
    if net.output_size() != 1 {
        return Err(Error::Unsupported(format!(
            "preprocessing needs a single-output network, got {} outputs; reduce the query first",
            net.output_size()
        )));
    }
    let mut layers: Vec<Layer> = net.layers().to_vec();
    let hidden = layers.len() - 1;
    let mut categories: Vec<Vec<Category>> = vec![Vec::new(); hidden];
    let mut origin: Vec<Vec<usize>> = vec![Vec::new(); hidden];
    let mut next_dirs = vec![Direction::Inc];

    for i in (0..hidden).rev() {
        let current = &layers[i];
        let next = &layers[i + 1];
        let mut in_rows = Vec::new();
        let mut biases = Vec::new();
        let mut out_cols: Vec<Vec<f64>> = Vec::new();
        let mut cats = Vec::new();
        let mut orig = Vec::new();

        for j in 0..current.size() {
            for cat in Category::ALL {
                let col: Vec<f64> = next
                    .weights
                    .iter()
                    .zip(&next_dirs)
                    .map(|(row, &d)| {
                        let w = row[j];
                        if w != 0.0 && Category::of_edge(w, d) == cat {
                            w
                        } else {
                            0.0
                        }
                    })
                    .collect();
                if col.iter().all(|&w| w == 0.0) {
                    continue;
                }
                in_rows.push(current.weights[j].clone());
                biases.push(current.biases[j]);
                out_cols.push(col);
                cats.push(cat);
                orig.push(j);
            }
        }

        if cats.is_empty() {
            // Every neuron of the layer is dead; keep one inert placeholder so
            // the layer stays nonempty.
            in_rows.push(vec![0.0; current.weights[0].len()]);
            biases.push(0.0);
            out_cols.push(vec![0.0; next.size()]);
            cats.push(Category::POS_INC);
            orig.push(0);
        }

        let next_weights: Vec<Vec<f64>> = (0..next.size())
            .map(|t| out_cols.iter().map(|col| col[t]).collect())
            .collect();
        let activation = current.activation;
        layers[i + 1].weights = next_weights;
        layers[i] = Layer::new(in_rows, biases, activation);
        next_dirs = cats.iter().map(|c| c.direction).collect();
        categories[i] = cats;
        origin[i] = orig;
    }

    let mut network = Network::new(net.input_size(), layers)?;
    if let Some(domain) = net.input_domain() {
        network = network.with_input_domain(domain.clone())?;
    }
    Ok(CategorizedNetwork {
        network,
        categories,
        origin,
    })
}
