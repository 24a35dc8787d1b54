//! Neuron merging and counterexample-guided splitting.
//!
//! An [`AbstractionState`] is a partition of every hidden layer of a
//! categorized network into same-category groups. The abstract network is a
//! function of that partition alone: the abstract neuron of group `H` gets
//!
//! * bias `agg_{h in H} b_h`,
//! * weight `sum_{g in G} agg_{h in H} w(g, h)` from the source group `G`,
//!
//! where `agg` is `max` for increasing groups and `min` for decreasing ones,
//! and the output neuron counts as an increasing singleton. For two singleton
//! neighbours this is the usual pairwise rule (incoming max/min, outgoing sum).
//! Summing over sources of the per-source aggregate makes the construction
//! monotone in the partition: splitting a group never raises the output.
//!
//! Max/min aggregation of incoming weights is only sound for nonnegative
//! source values, so the first hidden layer may be merged only when the input
//! box is nonnegative.

use std::sync::Arc;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::network::{InputBox, Layer, Network};
use crate::preprocess::{CategorizedNetwork, Category, Direction};

#[derive(Debug, Clone)]
pub struct AbstractionState {
    base: Arc<CategorizedNetwork>,
    /// `groups[layer]` lists the groups of that hidden layer; each group is a
    /// sorted, nonempty list of categorized-neuron indices. Groups are ordered
    /// by their smallest member.
    groups: Vec<Vec<Vec<usize>>>,
    merge_first_layer: bool,
    network: Network,
}

#[derive(Debug, Clone, Serialize)]
pub struct GroupRecord {
    pub layer: usize,
    pub abstract_neuron: usize,
    pub category: Category,
    /// Indices in the categorized network.
    pub members: Vec<usize>,
    /// Indices of the original neurons the members were copied from.
    pub origins: Vec<usize>,
}

impl AbstractionState {
    /// The state in which every group is a singleton.
    pub fn identity(base: Arc<CategorizedNetwork>, input: &InputBox) -> Self {
        let groups = base
            .categories
            .iter()
            .map(|cats| (0..cats.len()).map(|j| vec![j]).collect())
            .collect();
        Self::from_groups(base, groups, input.is_nonnegative())
    }

    fn from_groups(
        base: Arc<CategorizedNetwork>,
        mut groups: Vec<Vec<Vec<usize>>>,
        merge_first_layer: bool,
    ) -> Self {
        for layer in &mut groups {
            for g in layer.iter_mut() {
                g.sort_unstable();
            }
            layer.sort_by_key(|g| g[0]);
        }
        let network = build_network(&base, &groups);
        Self {
            base,
            groups,
            merge_first_layer,
            network,
        }
    }

    pub fn network(&self) -> &Network {
        &self.network
    }

    pub fn base(&self) -> &CategorizedNetwork {
        &self.base
    }

    pub fn base_arc(&self) -> &Arc<CategorizedNetwork> {
        &self.base
    }

    pub fn groups(&self) -> &[Vec<Vec<usize>>] {
        &self.groups
    }

    pub fn merges_first_layer(&self) -> bool {
        self.merge_first_layer
    }

    /// `sum_g (|g| - 1)`: the number of single splits left before the
    /// abstraction is the categorized network itself.
    pub fn merge_excess(&self) -> usize {
        self.groups.iter().flatten().map(|g| g.len() - 1).sum()
    }

    pub fn is_fully_refined(&self) -> bool {
        self.merge_excess() == 0
    }

    pub fn hidden_sizes(&self) -> Vec<usize> {
        self.groups.iter().map(Vec::len).collect()
    }

    pub fn group_category(&self, layer: usize, group: usize) -> Category {
        self.base.categories[layer][self.groups[layer][group][0]]
    }

    fn group_of(&self, layer: usize, neuron: usize) -> Option<usize> {
        self.groups
            .get(layer)?
            .iter()
            .position(|g| g.binary_search(&neuron).is_ok())
    }

    fn layer_mergeable(&self, layer: usize) -> bool {
        layer > 0 || self.merge_first_layer
    }

    /// Unions the groups containing categorized neurons `a` and `b` of hidden
    /// layer `layer`.
    pub fn merge_pair(&self, layer: usize, a: usize, b: usize) -> Result<Self> {
        let ga = self
            .group_of(layer, a)
            .ok_or_else(|| Error::Precondition(format!("neuron ({layer},{a}) does not exist")))?;
        let gb = self
            .group_of(layer, b)
            .ok_or_else(|| Error::Precondition(format!("neuron ({layer},{b}) does not exist")))?;
        if ga == gb {
            return Err(Error::Precondition(format!(
                "neurons {a} and {b} of layer {layer} are already in one group"
            )));
        }
        let (ca, cb) = (self.base.category(layer, a), self.base.category(layer, b));
        if ca != cb {
            return Err(Error::Precondition(format!(
                "cannot merge {ca} neuron {a} with {cb} neuron {b}"
            )));
        }
        if !self.layer_mergeable(layer) {
            return Err(Error::Precondition(
                "first hidden layer cannot be merged when inputs may be negative".into(),
            ));
        }
        let mut groups = self.groups.clone();
        let moved = std::mem::take(&mut groups[layer][gb]);
        groups[layer][ga].extend(moved);
        groups[layer].remove(gb);
        Ok(Self::from_groups(
            self.base.clone(),
            groups,
            self.merge_first_layer,
        ))
    }

    /// Group provenance, for debugging dumps.
    pub fn provenance(&self) -> Vec<GroupRecord> {
        let mut out = Vec::new();
        for (layer, groups) in self.groups.iter().enumerate() {
            for (k, g) in groups.iter().enumerate() {
                out.push(GroupRecord {
                    layer,
                    abstract_neuron: k,
                    category: self.group_category(layer, k),
                    members: g.clone(),
                    origins: g.iter().map(|&m| self.base.origin[layer][m]).collect(),
                });
            }
        }
        out
    }

    /// Splits up to `batch` constituents out of their groups, choosing those
    /// whose contribution at the spurious input `x0` is most misrepresented by
    /// the abstract neuron they belong to.
    ///
    /// The score of constituent `m` of group `G` is
    /// `sum_h |w(m,h) v_m(x0) - share_m(h) v_G(x0)|` over the outgoing edges of
    /// `m` in the categorized network, where `share_m(h)` is `m`'s term in the
    /// abstract weight from `G` to the group of `h`. Ties go to the lower
    /// (layer, neuron) pair.
    pub fn refine_split(&self, x0: &[f64], batch: usize) -> Result<Self> {
        if self.is_fully_refined() {
            return Err(Error::CannotRefine);
        }
        let batch = batch.max(1);
        let base_vals = self.base.network.activations(x0)?;
        let abs_vals = self.network.activations(x0)?;
        let layers = self.base.network.layers();

        let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
        for (i, groups) in self.groups.iter().enumerate() {
            let next = &layers[i + 1];
            let next_groups = self.target_groups(i + 1);
            // Group index of every base neuron of layer i+1.
            let mut owner = vec![0usize; next.size()];
            for (k, g) in next_groups.iter().enumerate() {
                for &h in g {
                    owner[h] = k;
                }
            }
            for (gi, g) in groups.iter().enumerate() {
                if g.len() < 2 {
                    continue;
                }
                let vg = abs_vals[i][gi];
                for &m in g {
                    let vm = base_vals[i][m];
                    let score: f64 = (0..next.size())
                        .map(|h| {
                            let hg = &next_groups[owner[h]];
                            let dir = self.base.direction_of(i + 1, hg[0]);
                            let share = aggregate(dir, hg.iter().map(|&t| next.weights[t][m]));
                            (next.weights[h][m] * vm - share * vg).abs()
                        })
                        .sum();
                    candidates.push((score, i, m));
                }
            }
        }
        candidates.sort_by(|a, b| {
            b.0.partial_cmp(&a.0)
                .unwrap_or(std::cmp::Ordering::Equal)
                .then(a.1.cmp(&b.1))
                .then(a.2.cmp(&b.2))
        });

        let mut groups = self.groups.clone();
        let mut split = 0;
        for (_, layer, m) in candidates {
            if split == batch {
                break;
            }
            let gi = groups[layer]
                .iter()
                .position(|g| g.binary_search(&m).is_ok())
                .expect("every neuron belongs to a group");
            if groups[layer][gi].len() < 2 {
                continue;
            }
            groups[layer][gi].retain(|&x| x != m);
            groups[layer].push(vec![m]);
            split += 1;
        }
        Ok(Self::from_groups(
            self.base.clone(),
            groups,
            self.merge_first_layer,
        ))
    }

    fn target_groups(&self, layer: usize) -> Vec<Vec<usize>> {
        if layer < self.groups.len() {
            self.groups[layer].clone()
        } else {
            vec![vec![0]]
        }
    }
}

#[inline]
fn aggregate(dir: Direction, values: impl Iterator<Item = f64>) -> f64 {
    match dir {
        Direction::Inc => values.fold(f64::NEG_INFINITY, f64::max),
        Direction::Dec => values.fold(f64::INFINITY, f64::min),
    }
}

fn build_network(base: &CategorizedNetwork, groups: &[Vec<Vec<usize>>]) -> Network {
    let layers = base.network.layers();
    let input_size = base.network.input_size();
    let inputs: Vec<Vec<usize>> = (0..input_size).map(|k| vec![k]).collect();
    let output = vec![vec![0usize]];
    let mut out = Vec::with_capacity(layers.len());
    for (i, layer) in layers.iter().enumerate() {
        let targets = if i < groups.len() {
            &groups[i]
        } else {
            &output
        };
        let sources = if i == 0 { &inputs } else { &groups[i - 1] };
        let mut weights = Vec::with_capacity(targets.len());
        let mut biases = Vec::with_capacity(targets.len());
        for h_group in targets {
            let dir = base.direction_of(i, h_group[0]);
            biases.push(aggregate(dir, h_group.iter().map(|&h| layer.biases[h])));
            let row = sources
                .iter()
                .map(|g_group| {
                    g_group
                        .iter()
                        .map(|&g| aggregate(dir, h_group.iter().map(|&h| layer.weights[h][g])))
                        .sum()
                })
                .collect();
            weights.push(row);
        }
        out.push(Layer::new(weights, biases, layer.activation));
    }
    Network::new(input_size, out).expect("abstract network has consistent shapes")
}

/// Merges every mergeable layer down to one group per category.
pub fn abstract_to_saturation(base: Arc<CategorizedNetwork>, input: &InputBox) -> AbstractionState {
    let merge_first_layer = input.is_nonnegative();
    let groups = base
        .categories
        .iter()
        .enumerate()
        .map(|(i, cats)| {
            if i == 0 && !merge_first_layer {
                return (0..cats.len()).map(|j| vec![j]).collect();
            }
            Category::ALL
                .iter()
                .map(|c| {
                    cats.iter()
                        .enumerate()
                        .filter(|(_, cat)| *cat == c)
                        .map(|(j, _)| j)
                        .collect::<Vec<_>>()
                })
                .filter(|g| !g.is_empty())
                .collect()
        })
        .collect();
    AbstractionState::from_groups(base, groups, merge_first_layer)
}
