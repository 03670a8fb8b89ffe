//! Item data model, synthetic generation and the dataset text format.
//!
//! A dataset file looks like this:
//!
//! ```text
//! attrsearch-dataset 1
//! dim 4
//! attribute closure lace-up slip-on
//! attribute heel flat high
//! items 2
//! item-000000 train closure=lace-up;heel=flat 0.5 -1 0.25 0
//! item-000001 test heel=high 1 2 3 4
//! ```
//!
//! Fields on a line are separated by single spaces. Every item line carries, in
//! order: the id, the split (`train`, `val` or `test`), a `;`-separated list of
//! `attribute=value` assignments (at least one), then exactly `dim` floats.
//! Floats are written with Rust's shortest round-trip representation, so
//! `load(save(d)) == d` bit for bit. Lines starting with `#` and blank lines are
//! ignored.

use std::collections::{HashMap, HashSet};
use std::fmt::{self, Write as _};
use std::fs;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::{Error, Result};

const MAGIC: &str = "attrsearch-dataset";
const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Attribute {
    pub name: String,
    pub values: Vec<String>,
}

impl Attribute {
    pub fn new<S: Into<String>>(name: S, values: impl IntoIterator<Item = S>) -> Self {
        Attribute {
            name: name.into(),
            values: values.into_iter().map(Into::into).collect(),
        }
    }
}

/// Ordered attribute vocabularies. One embedding space is trained per attribute.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<Attribute>", into = "Vec<Attribute>")]
pub struct Schema {
    attributes: Vec<Attribute>,
}

fn valid_token(s: &str) -> bool {
    !s.is_empty() && !s.chars().any(|c| c.is_whitespace() || c == '=' || c == ';')
}

impl Schema {
    pub fn new(attributes: Vec<Attribute>) -> Result<Self> {
        if attributes.is_empty() {
            return Err(Error::Config("schema needs at least one attribute".into()));
        }
        let mut names = HashSet::new();
        for attr in &attributes {
            if !valid_token(&attr.name) {
                return Err(Error::Config(format!(
                    "invalid attribute name `{}`",
                    attr.name
                )));
            }
            if !names.insert(attr.name.as_str()) {
                return Err(Error::Config(format!(
                    "duplicate attribute `{}`",
                    attr.name
                )));
            }
            if attr.values.is_empty() {
                return Err(Error::Config(format!(
                    "attribute `{}` has no values",
                    attr.name
                )));
            }
            let mut seen = HashSet::new();
            for v in &attr.values {
                if !valid_token(v) {
                    return Err(Error::Config(format!(
                        "invalid value `{v}` for attribute `{}`",
                        attr.name
                    )));
                }
                if !seen.insert(v.as_str()) {
                    return Err(Error::Config(format!(
                        "duplicate value `{v}` for attribute `{}`",
                        attr.name
                    )));
                }
            }
        }
        Ok(Schema { attributes })
    }

    /// Number of attributes, which is also the number of embedding spaces.
    pub fn len(&self) -> usize {
        self.attributes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.attributes.is_empty()
    }

    pub fn attributes(&self) -> &[Attribute] {
        &self.attributes
    }

    pub fn attribute(&self, index: usize) -> &Attribute {
        &self.attributes[index]
    }

    pub fn attribute_index(&self, name: &str) -> Option<usize> {
        self.attributes.iter().position(|a| a.name == name)
    }

    pub fn value_index(&self, attribute: usize, label: &str) -> Option<usize> {
        self.attributes[attribute]
            .values
            .iter()
            .position(|v| v == label)
    }

    pub fn total_labels(&self) -> usize {
        self.attributes.iter().map(|a| a.values.len()).sum()
    }

    /// Content hash of the schema, used to tie checkpoints to datasets.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        for attr in &self.attributes {
            hasher.update(attr.name.as_bytes());
            hasher.update([0u8]);
            for v in &attr.values {
                hasher.update(v.as_bytes());
                hasher.update([1u8]);
            }
            hasher.update([2u8]);
        }
        hex::encode(hasher.finalize())
    }

    /// Parses the compact `name:v1,v2;name:v1,v2` form used on the command line.
    pub fn parse_compact(spec: &str) -> Result<Self> {
        let mut attributes = Vec::new();
        for part in spec.split(';').map(str::trim).filter(|p| !p.is_empty()) {
            let (name, values) = part
                .split_once(':')
                .ok_or_else(|| Error::Config(format!("expected `name:v1,v2` but got `{part}`")))?;
            attributes.push(Attribute::new(
                name.trim(),
                values.split(',').map(str::trim).filter(|v| !v.is_empty()),
            ));
        }
        Schema::new(attributes)
    }
}

impl TryFrom<Vec<Attribute>> for Schema {
    type Error = Error;

    fn try_from(value: Vec<Attribute>) -> Result<Self> {
        Schema::new(value)
    }
}

impl From<Schema> for Vec<Attribute> {
    fn from(value: Schema) -> Self {
        value.attributes
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

/// Per-attribute value indices; `None` means the label is absent.
pub type Labels = Vec<Option<usize>>;

#[derive(Clone, Debug, PartialEq)]
pub struct Item {
    pub id: String,
    pub split: Split,
    pub labels: Labels,
    pub features: Vec<f64>,
}

/// Number of attributes on which two label sets carry the same value.
pub fn shared_labels(a: &[Option<usize>], b: &[Option<usize>]) -> usize {
    a.iter()
        .zip(b)
        .filter(|(x, y)| matches!((x, y), (Some(x), Some(y)) if x == y))
        .count()
}

/// An immutable set of labelled items. Items are kept sorted by id, so item
/// indices order the same way ids do.
#[derive(Clone, Debug)]
pub struct Dataset {
    schema: Schema,
    dim: usize,
    items: Vec<Item>,
    by_id: HashMap<String, usize>,
}

impl PartialEq for Dataset {
    fn eq(&self, other: &Self) -> bool {
        self.schema == other.schema && self.dim == other.dim && self.items == other.items
    }
}

impl Dataset {
    pub fn new(schema: Schema, dim: usize, mut items: Vec<Item>) -> Result<Self> {
        if dim == 0 {
            return Err(Error::Config("feature dimension must be positive".into()));
        }
        for item in &items {
            validate_item(&schema, dim, item)?;
        }
        items.sort_by(|a, b| a.id.cmp(&b.id));
        let mut by_id = HashMap::with_capacity(items.len());
        for (i, item) in items.iter().enumerate() {
            if by_id.insert(item.id.clone(), i).is_some() {
                return Err(Error::Config(format!("duplicate item id `{}`", item.id)));
            }
        }
        Ok(Dataset {
            schema,
            dim,
            items,
            by_id,
        })
    }

    pub fn schema(&self) -> &Schema {
        &self.schema
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn items(&self) -> &[Item] {
        &self.items
    }

    pub fn item(&self, index: usize) -> &Item {
        &self.items[index]
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn index_of(&self, id: &str) -> Option<usize> {
        self.by_id.get(id).copied()
    }

    /// Indices of items in `split`, or all items when `split` is `None`.
    pub fn indices(&self, split: Option<Split>) -> Vec<usize> {
        (0..self.items.len())
            .filter(|&i| split.is_none_or(|s| self.items[i].split == s))
            .collect()
    }

    /// Labels of an item keyed by attribute name.
    pub fn named_labels(&self, index: usize) -> Vec<(&str, &str)> {
        self.items[index]
            .labels
            .iter()
            .enumerate()
            .filter_map(|(a, v)| {
                v.map(|v| {
                    let attr = self.schema.attribute(a);
                    (attr.name.as_str(), attr.values[v].as_str())
                })
            })
            .collect()
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{MAGIC} {FORMAT_VERSION}");
        let _ = writeln!(out, "dim {}", self.dim);
        for attr in self.schema.attributes() {
            let _ = writeln!(out, "attribute {} {}", attr.name, attr.values.join(" "));
        }
        let _ = writeln!(out, "items {}", self.items.len());
        for item in &self.items {
            let _ = write!(out, "{} {} ", item.id, item.split);
            let labels: Vec<String> = item
                .labels
                .iter()
                .enumerate()
                .filter_map(|(a, v)| {
                    v.map(|v| {
                        let attr = self.schema.attribute(a);
                        format!("{}={}", attr.name, attr.values[v])
                    })
                })
                .collect();
            out.push_str(&labels.join(";"));
            for x in &item.features {
                let _ = write!(out, " {x}");
            }
            out.push('\n');
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim_end()))
            .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

        let (ln, header) = lines.next().ok_or_else(|| Error::parse(1, "empty file"))?;
        match header.split_once(' ') {
            Some((MAGIC, v)) if v.trim() == FORMAT_VERSION.to_string() => {}
            _ => {
                return Err(Error::parse(
                    ln,
                    format!("expected `{MAGIC} {FORMAT_VERSION}` header"),
                ))
            }
        }

        let (ln, dim_line) = lines
            .next()
            .ok_or_else(|| Error::parse(ln, "missing `dim` line"))?;
        let dim: usize = dim_line
            .strip_prefix("dim ")
            .and_then(|d| d.trim().parse().ok())
            .ok_or_else(|| Error::parse(ln, "expected `dim <D>`"))?;

        let mut attributes = Vec::new();
        let item_count;
        let mut last = ln;
        loop {
            let (ln, line) = lines
                .next()
                .ok_or_else(|| Error::parse(last, "missing `items` line"))?;
            last = ln;
            if let Some(rest) = line.strip_prefix("attribute ") {
                let mut parts = rest.split(' ');
                let name = parts.next().unwrap_or_default();
                attributes.push(Attribute::new(name, parts));
            } else if let Some(rest) = line.strip_prefix("items ") {
                item_count = rest
                    .trim()
                    .parse::<usize>()
                    .map_err(|_| Error::parse(ln, "expected `items <N>`"))?;
                break;
            } else {
                return Err(Error::parse(ln, "expected `attribute` or `items` line"));
            }
        }
        let schema = Schema::new(attributes).map_err(|e| Error::parse(last, e.to_string()))?;

        let mut items = Vec::with_capacity(item_count);
        for (ln, line) in lines {
            items.push(parse_item(&schema, dim, line).map_err(|m| Error::parse(ln, m))?);
            last = ln;
        }
        if items.len() != item_count {
            return Err(Error::parse(
                last,
                format!(
                    "header declares {item_count} items but found {}",
                    items.len()
                ),
            ));
        }
        Dataset::new(schema, dim, items)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Dataset::from_text(&text)
    }
}

fn validate_item(schema: &Schema, dim: usize, item: &Item) -> Result<()> {
    if !valid_token(&item.id) {
        return Err(Error::Config(format!("invalid item id `{}`", item.id)));
    }
    if item.features.len() != dim {
        return Err(Error::Config(format!(
            "item `{}` has {} features, expected {dim}",
            item.id,
            item.features.len()
        )));
    }
    if item.labels.len() != schema.len() {
        return Err(Error::Config(format!(
            "item `{}` has {} label slots, expected {}",
            item.id,
            item.labels.len(),
            schema.len()
        )));
    }
    for (a, v) in item.labels.iter().enumerate() {
        if let Some(v) = v {
            if *v >= schema.attribute(a).values.len() {
                return Err(Error::Config(format!(
                    "item `{}` has out-of-range value for `{}`",
                    item.id,
                    schema.attribute(a).name
                )));
            }
        }
    }
    if item.labels.iter().all(Option::is_none) {
        return Err(Error::Config(format!("item `{}` has no labels", item.id)));
    }
    Ok(())
}

fn parse_item(schema: &Schema, dim: usize, line: &str) -> std::result::Result<Item, String> {
    let mut fields = line.split(' ');
    let id = fields
        .next()
        .filter(|s| !s.is_empty())
        .ok_or("missing item id")?;
    let split: Split = fields
        .next()
        .ok_or("missing split")?
        .parse()
        .map_err(|e: Error| e.to_string())?;
    let label_field = fields.next().ok_or("missing labels")?;
    let mut labels = vec![None; schema.len()];
    for assignment in label_field.split(';') {
        let (name, value) = assignment
            .split_once('=')
            .ok_or_else(|| format!("malformed label `{assignment}`"))?;
        let a = schema
            .attribute_index(name)
            .ok_or_else(|| format!("unknown attribute `{name}`"))?;
        let v = schema
            .value_index(a, value)
            .ok_or_else(|| format!("unknown value `{value}` for attribute `{name}`"))?;
        if labels[a].replace(v).is_some() {
            return Err(format!("attribute `{name}` assigned twice"));
        }
    }
    let features = fields
        .map(|f| f.parse::<f64>().map_err(|_| format!("invalid float `{f}`")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if features.len() != dim {
        return Err(format!("expected {dim} features, found {}", features.len()));
    }
    let item = Item {
        id: id.to_string(),
        split,
        labels,
        features,
    };
    validate_item(schema, dim, &item).map_err(|e| e.to_string())?;
    Ok(item)
}

/// Parameters of the prototype-plus-noise generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticConfig {
    pub n_items: usize,
    pub dim: usize,
    pub noise_sigma: f64,
    pub seed: u64,
    /// Probability that an attribute other than the first is labelled. The
    /// first attribute is always labelled.
    pub label_density: f64,
    pub train_fraction: f64,
    pub val_fraction: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            n_items: 2000,
            dim: 32,
            noise_sigma: 0.25,
            seed: 0,
            label_density: 1.0,
            train_fraction: 0.7,
            val_fraction: 0.1,
        }
    }
}

/// A four-attribute shoe-like schema used as the default for generated data.
pub fn default_schema() -> Schema {
    Schema::new(vec![
        Attribute::new("category", ["boot", "sandal", "shoe", "slipper"]),
        Attribute::new("closure", ["lace-up", "slip-on", "buckle"]),
        Attribute::new("heel", ["flat", "low", "mid", "high", "stiletto"]),
        Attribute::new("material", ["leather", "suede", "canvas", "synthetic"]),
    ])
    .expect("built-in schema is valid")
}

/// Orthonormal prototype directions, one per (attribute, value), laid out in
/// schema order.
pub fn prototypes(schema: &Schema, dim: usize, seed: u64) -> Result<Vec<Vec<f64>>> {
    let total = schema.total_labels();
    if dim < total {
        return Err(Error::Config(format!(
            "feature dimension {dim} cannot hold {total} orthogonal prototypes"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(total);
    while basis.len() < total {
        let mut v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect();
        for b in &basis {
            let proj: f64 = v.iter().zip(b).map(|(x, y)| x * y).sum();
            v.iter_mut().zip(b).for_each(|(x, y)| *x -= proj * y);
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if norm > 1e-6 {
            v.iter_mut().for_each(|x| *x /= norm);
            basis.push(v);
        }
    }
    Ok(basis)
}

/// Generates a dataset whose feature vectors are the sum of the prototypes of
/// each item's labels plus isotropic Gaussian noise.
pub fn generate_synthetic(schema: &Schema, config: &SyntheticConfig) -> Result<Dataset> {
    if config.n_items == 0 {
        return Err(Error::Config("n_items must be at least 1".into()));
    }
    if !(config.noise_sigma >= 0.0 && config.noise_sigma.is_finite()) {
        return Err(Error::Config(
            "noise_sigma must be finite and non-negative".into(),
        ));
    }
    if !(0.0..=1.0).contains(&config.label_density) {
        return Err(Error::Config("label_density must lie in [0, 1]".into()));
    }
    let holdout = config.train_fraction + config.val_fraction;
    if config.train_fraction < 0.0 || config.val_fraction < 0.0 || holdout > 1.0 {
        return Err(Error::Config(
            "split fractions must be non-negative and sum to at most 1".into(),
        ));
    }

    let protos = prototypes(schema, config.dim, config.seed)?;
    let offsets: Vec<usize> = schema
        .attributes()
        .iter()
        .scan(0, |acc, a| {
            let start = *acc;
            *acc += a.values.len();
            Some(start)
        })
        .collect();

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let n = config.n_items;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_train = (config.train_fraction * n as f64).round() as usize;
    let n_val = ((config.val_fraction * n as f64).round() as usize).min(n - n_train.min(n));
    let mut splits = vec![Split::Test; n];
    for (rank, &i) in order.iter().enumerate() {
        splits[i] = if rank < n_train {
            Split::Train
        } else if rank < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
    }

    let width = n.to_string().len().max(6);
    let mut items = Vec::with_capacity(n);
    for (i, split) in splits.into_iter().enumerate() {
        let labels: Labels = schema
            .attributes()
            .iter()
            .enumerate()
            .map(|(a, attr)| {
                let present = a == 0 || rng.gen_bool(config.label_density);
                let value = rng.gen_range(0..attr.values.len());
                present.then_some(value)
            })
            .collect();
        let mut features = vec![0.0; config.dim];
        for (a, v) in labels.iter().enumerate() {
            if let Some(v) = v {
                let p = &protos[offsets[a] + v];
                features.iter_mut().zip(p).for_each(|(f, x)| *f += x);
            }
        }
        if config.noise_sigma > 0.0 {
            for f in features.iter_mut() {
                let z: f64 = StandardNormal.sample(&mut rng);
                *f += config.noise_sigma * z;
            }
        }
        items.push(Item {
            id: format!("item-{i:0width$}"),
            split,
            labels,
            features,
        });
    }
    Dataset::new(schema.clone(), config.dim, items)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> Schema {
        Schema::new(vec![
            Attribute::new("color", ["red", "blue"]),
            Attribute::new("shape", ["round", "square"]),
        ])
        .unwrap()
    }

    #[test]
    fn zero_noise_features_are_prototype_sums() {
        let schema = two_by_two();
        let cfg = SyntheticConfig {
            n_items: 4,
            dim: 8,
            noise_sigma: 0.0,
            seed: 7,
            ..Default::default()
        };
        let data = generate_synthetic(&schema, &cfg).unwrap();
        let protos = prototypes(&schema, 8, 7).unwrap();
        assert_eq!(data.len(), 4);
        for item in data.items() {
            let mut expected = vec![0.0; 8];
            let c = item.labels[0].unwrap();
            let s = item.labels[1].unwrap();
            for (k, e) in expected.iter_mut().enumerate() {
                *e = protos[c][k] + protos[2 + s][k];
            }
            assert_eq!(item.features, expected);
        }
    }

    #[test]
    fn generation_is_deterministic() {
        let schema = two_by_two();
        let cfg = SyntheticConfig {
            n_items: 4,
            dim: 8,
            noise_sigma: 0.1,
            seed: 7,
            ..Default::default()
        };
        let a = generate_synthetic(&schema, &cfg).unwrap();
        let b = generate_synthetic(&schema, &cfg).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.to_text(), b.to_text());
    }

    #[test]
    fn too_small_dimension_is_a_config_error() {
        let err = generate_synthetic(
            &default_schema(),
            &SyntheticConfig {
                dim: 8,
                ..Default::default()
            },
        )
        .unwrap_err();
        assert!(matches!(err, Error::Config(_)));
    }

    #[test]
    fn sparse_labels_keep_first_attribute() {
        let cfg = SyntheticConfig {
            n_items: 200,
            label_density: 0.3,
            ..Default::default()
        };
        let data = generate_synthetic(&default_schema(), &cfg).unwrap();
        assert!(data.items().iter().all(|i| i.labels[0].is_some()));
        let missing = data
            .items()
            .iter()
            .flat_map(|i| &i.labels[1..])
            .filter(|l| l.is_none())
            .count();
        assert!(missing > 200, "expected many missing labels, got {missing}");
    }

    #[test]
    fn empty_dataset_round_trips_with_header_only() {
        let data = Dataset::new(two_by_two(), 3, vec![]).unwrap();
        let text = data.to_text();
        assert_eq!(text.lines().count(), 5);
        assert_eq!(Dataset::from_text(&text).unwrap(), data);
    }

    #[test]
    fn parses_hand_written_fixture() {
        let text = "\
attrsearch-dataset 1
# two hand-written items
dim 3
attribute color red blue
attribute shape round square
items 2
b-2 test shape=square 1 2 3
a-1 train color=blue;shape=round -0.5 0 1e-3
";
        let data = Dataset::from_text(text).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.item(0).id, "a-1");
        assert_eq!(data.item(0).split, Split::Train);
        assert_eq!(
            data.named_labels(0),
            vec![("color", "blue"), ("shape", "round")]
        );
        assert_eq!(data.item(0).features, vec![-0.5, 0.0, 0.001]);
        assert_eq!(data.item(1).id, "b-2");
        assert_eq!(data.named_labels(1), vec![("shape", "square")]);
        assert_eq!(data.index_of("b-2"), Some(1));
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let base = "attrsearch-dataset 1\ndim 2\nattribute color red blue\nitems 1\n";
        let cases = [
            ("x train color=green 1 2\n", "unknown value"),
            ("x train size=big 1 2\n", "unknown attribute"),
            ("x train color=red 1\n", "expected 2 features"),
            ("x train color=red 1 nope\n", "invalid float"),
            ("x nowhere color=red 1 2\n", "unknown split"),
        ];
        for (line, needle) in cases {
            let err = Dataset::from_text(&format!("{base}{line}")).unwrap_err();
            match err {
                Error::Parse { line, message } => {
                    assert_eq!(line, 5);
                    assert!(message.contains(needle), "{message} lacks {needle}");
                }
                other => panic!("unexpected {other:?}"),
            }
        }
        let err = Dataset::from_text(&format!("{base}")).unwrap_err();
        assert!(matches!(err, Error::Parse { .. }));
    }

    #[test]
    fn duplicate_ids_rejected() {
        let schema = two_by_two();
        let item = Item {
            id: "x".into(),
            split: Split::Train,
            labels: vec![Some(0), None],
            features: vec![0.0],
        };
        assert!(Dataset::new(schema, 1, vec![item.clone(), item]).is_err());
    }

    #[test]
    fn compact_schema_syntax() {
        let s = Schema::parse_compact("color:red,blue; shape:round,square,oval").unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s.total_labels(), 5);
        assert!(Schema::parse_compact("color").is_err());
        assert!(Schema::parse_compact("a:x;a:y").is_err());
        assert_ne!(s.fingerprint(), two_by_two().fingerprint());
    }
}
