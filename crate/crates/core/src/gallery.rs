//! A searchable set of items with their attribute representations precomputed.
//!
//! Gallery positions are local indices `0..len()`; they follow dataset order,
//! which is id order, so "ties broken by id" and "ties broken by position" are
//! the same thing.

use std::collections::HashMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, Labels, Split};
use crate::embedding::{euclidean, EmbeddingModel};

/// Which distance a computation runs in.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Space {
    /// One attribute's masked embedding.
    Attribute(usize),
    /// Mean of the masked distances over every attribute space.
    Pooled,
}

#[derive(Clone, Debug)]
pub struct Gallery {
    ids: Vec<String>,
    dataset_index: Vec<usize>,
    labels: Vec<Labels>,
    attribute_names: Vec<String>,
    n_attributes: usize,
    dim: usize,
    /// Per attribute, `len × dim` row-major representations.
    embeddings: Vec<Vec<f64>>,
}

impl Gallery {
    /// Embeds the given dataset items. `items` are sorted so positions follow id order.
    pub fn build(model: &EmbeddingModel, dataset: &Dataset, items: &[usize]) -> Self {
        let mut items = items.to_vec();
        items.sort_unstable();
        items.dedup();
        let n_attributes = dataset.schema().len();
        let dim = model.embedding_dim;
        let masks: Vec<Vec<f64>> = (0..n_attributes).map(|a| model.mask(a)).collect();
        let mut embeddings = vec![Vec::with_capacity(items.len() * dim); n_attributes];
        for &i in &items {
            let g = model.general(&dataset.item(i).features);
            for (a, mask) in masks.iter().enumerate() {
                embeddings[a].extend(model.represent(&g, mask));
            }
        }
        Gallery {
            ids: items.iter().map(|&i| dataset.item(i).id.clone()).collect(),
            labels: items
                .iter()
                .map(|&i| dataset.item(i).labels.clone())
                .collect(),
            dataset_index: items,
            attribute_names: dataset
                .schema()
                .attributes()
                .iter()
                .map(|a| a.name.clone())
                .collect(),
            n_attributes,
            dim,
            embeddings,
        }
    }

    pub fn from_split(model: &EmbeddingModel, dataset: &Dataset, split: Option<Split>) -> Self {
        Gallery::build(model, dataset, &dataset.indices(split))
    }

    /// A gallery from explicit representations, mostly for tests and fixtures.
    /// `embeddings[a][i]` is item `i`'s vector in attribute `a`'s space.
    pub fn from_embeddings(
        ids: Vec<String>,
        labels: Vec<Labels>,
        embeddings: Vec<Vec<Vec<f64>>>,
    ) -> Self {
        let n_attributes = embeddings.len();
        assert!(n_attributes > 0, "at least one attribute space");
        let dim = embeddings[0].first().map_or(0, Vec::len);
        assert!(embeddings
            .iter()
            .all(|e| e.len() == ids.len() && e.iter().all(|v| v.len() == dim)));
        assert_eq!(labels.len(), ids.len());
        Gallery {
            dataset_index: (0..ids.len()).collect(),
            ids,
            labels,
            attribute_names: (0..n_attributes).map(|a| format!("a{a}")).collect(),
            n_attributes,
            dim,
            embeddings: embeddings.into_iter().map(|e| e.concat()).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn n_attributes(&self) -> usize {
        self.n_attributes
    }

    pub fn attribute_name(&self, attribute: usize) -> &str {
        &self.attribute_names[attribute]
    }

    pub fn embedding_dim(&self) -> usize {
        self.dim
    }

    pub fn id(&self, pos: usize) -> &str {
        &self.ids[pos]
    }

    pub fn ids(&self) -> &[String] {
        &self.ids
    }

    /// Gallery positions of `(query, target)` dataset-index pairs.
    pub fn pair_positions(
        &self,
        pairs: &[crate::sampling::QueryTargetPair],
    ) -> Option<Vec<(usize, usize)>> {
        pairs
            .iter()
            .map(|p| {
                Some((
                    self.position_of_dataset_index(p.query)?,
                    self.position_of_dataset_index(p.target)?,
                ))
            })
            .collect()
    }

    pub fn labels(&self, pos: usize) -> &Labels {
        &self.labels[pos]
    }

    pub fn dataset_index(&self, pos: usize) -> usize {
        self.dataset_index[pos]
    }

    /// Gallery position of a dataset index.
    pub fn position_of_dataset_index(&self, index: usize) -> Option<usize> {
        self.dataset_index.binary_search(&index).ok()
    }

    pub fn position_of(&self, id: &str) -> Option<usize> {
        self.ids
            .binary_search_by(|probe| probe.as_str().cmp(id))
            .ok()
    }

    pub fn embedding(&self, attribute: usize, pos: usize) -> &[f64] {
        &self.embeddings[attribute][pos * self.dim..(pos + 1) * self.dim]
    }

    pub fn distance(&self, space: Space, i: usize, j: usize) -> f64 {
        match space {
            Space::Attribute(a) => euclidean(self.embedding(a, i), self.embedding(a, j)),
            Space::Pooled => self.pooled_distance(i, j),
        }
    }

    pub fn pooled_distance(&self, i: usize, j: usize) -> f64 {
        let sum: f64 = (0..self.n_attributes)
            .map(|a| euclidean(self.embedding(a, i), self.embedding(a, j)))
            .sum();
        sum / self.n_attributes as f64
    }

    /// Distances from `pos` to every gallery item in each space: one row per
    /// attribute, then the pooled row.
    pub fn distance_rows(&self, pos: usize) -> Vec<Vec<f64>> {
        let n = self.len();
        let mut rows: Vec<Vec<f64>> = (0..self.n_attributes)
            .map(|a| {
                let q = self.embedding(a, pos);
                (0..n).map(|j| euclidean(q, self.embedding(a, j))).collect()
            })
            .collect();
        let pooled = (0..n)
            .map(|j| rows.iter().map(|r| r[j]).sum::<f64>() / self.n_attributes as f64)
            .collect();
        rows.push(pooled);
        rows
    }

    /// Row index of `space` inside [`Gallery::distance_rows`].
    pub fn space_index(&self, space: Space) -> usize {
        match space {
            Space::Attribute(a) => a,
            Space::Pooled => self.n_attributes,
        }
    }
}

/// Lazily computed [`Gallery::distance_rows`], keyed by gallery position.
#[derive(Clone, Debug, Default)]
pub struct DistanceCache {
    rows: HashMap<usize, Arc<Vec<Vec<f64>>>>,
}

impl DistanceCache {
    pub fn rows(&mut self, gallery: &Gallery, pos: usize) -> Arc<Vec<Vec<f64>>> {
        self.rows
            .entry(pos)
            .or_insert_with(|| Arc::new(gallery.distance_rows(pos)))
            .clone()
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }
}
