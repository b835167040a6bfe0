//! Semantic space: class identifiers, colonies, and the prior partition.
//!
//! A [`SemanticPrior`] groups the `c` classes of a dataset into disjoint
//! colonies ("vehicles", "animals", ...). Colony co-membership is the only
//! relation between classes; opposite labels are drawn from outside the true
//! label's colony.
//!
//! Taxonomy files are UTF-8 text:
//!
//! ```text
//! # comment
//! classes: 10
//! names: airplane, automobile, bird, cat, deer, dog, frog, horse, ship, truck
//! vehicles: 0, 1, 8, 9
//! animals: 2, 3, 4, 5, 6, 7
//! ```
//!
//! `classes:` is required, `names:` is optional (defaults to the decimal
//! index). Every other `key: list` line declares one colony.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Index of a class in `[0, class_count)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ClassId(pub usize);

impl ClassId {
    #[inline]
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl From<ClassId> for usize {
    fn from(id: ClassId) -> usize {
        id.0
    }
}

/// A named group of semantically related classes. Members are strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Colony {
    name: String,
    members: Vec<ClassId>,
}

impl Colony {
    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn members(&self) -> &[ClassId] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, y: ClassId) -> bool {
        self.members.binary_search(&y).is_ok()
    }
}

/// Names of the taxonomies bundled with the crate.
pub const BUILTIN_PRIORS: [&str; 4] = ["fashion-mnist", "cifar10", "cifar100-sd-v1", "cifar100-sd-v2"];

const FASHION_MNIST: &str = include_str!("../taxonomies/fashion_mnist.txt");
const CIFAR10: &str = include_str!("../taxonomies/cifar10.txt");
const CIFAR100_SD_V1: &str = include_str!("../taxonomies/cifar100_sd_v1.txt");
const CIFAR100_SD_V2: &str = include_str!("../taxonomies/cifar100_sd_v2.txt");

/// An exact partition of `{0, …, class_count − 1}` into at least two colonies.
///
/// Immutable once built; cheap to share across threads by reference.
#[derive(Debug, Clone)]
pub struct SemanticPrior {
    class_count: usize,
    class_names: Vec<String>,
    colonies: Vec<Colony>,
    colony_of: Vec<usize>,
    // Complement of each class's colony, ascending.
    pools: Vec<Vec<ClassId>>,
}

impl PartialEq for SemanticPrior {
    fn eq(&self, other: &Self) -> bool {
        self.class_count == other.class_count
            && self.class_names == other.class_names
            && self.colonies == other.colonies
    }
}

impl Eq for SemanticPrior {}

impl SemanticPrior {
    /// Builds and validates a prior. `class_names` defaults to the decimal index of each class.
    pub fn new<S: Into<String>>(
        class_count: usize,
        class_names: Option<Vec<String>>,
        colonies: impl IntoIterator<Item = (S, Vec<usize>)>,
    ) -> Result<Self> {
        if class_count < 2 {
            return Err(Error::Validation(format!(
                "class count must be at least 2, got {class_count}"
            )));
        }
        let class_names = match class_names {
            Some(names) if names.len() != class_count => {
                return Err(Error::Validation(format!(
                    "{} class names given for {class_count} classes",
                    names.len()
                )))
            }
            Some(names) => names,
            None => (0..class_count).map(|i| i.to_string()).collect(),
        };

        let mut owner: Vec<Option<usize>> = vec![None; class_count];
        let mut built: Vec<Colony> = Vec::new();
        let mut seen_names = HashMap::new();
        for (k, (name, members)) in colonies.into_iter().enumerate() {
            let name = name.into();
            if let Some(prev) = seen_names.insert(name.clone(), k) {
                return Err(Error::Validation(format!(
                    "duplicate colony name \"{name}\" (colonies #{prev} and #{k})"
                )));
            }
            if members.is_empty() {
                return Err(Error::Validation(format!("empty colony \"{name}\"")));
            }
            let mut sorted = BTreeSet::new();
            for &m in &members {
                if m >= class_count {
                    return Err(Error::Validation(format!(
                        "colony \"{name}\" references class {m}, outside [0, {class_count})"
                    )));
                }
                if !sorted.insert(m) {
                    return Err(Error::Validation(format!(
                        "class {m} listed twice in colony \"{name}\""
                    )));
                }
                if let Some(other) = owner[m] {
                    let other_name = &built[other].name;
                    return Err(Error::Validation(format!(
                        "overlapping colonies: class {m} is in both \"{other_name}\" and \"{name}\""
                    )));
                }
                owner[m] = Some(built.len());
            }
            built.push(Colony {
                name,
                members: sorted.into_iter().map(ClassId).collect(),
            });
        }

        if let Some(missing) = owner.iter().position(Option::is_none) {
            return Err(Error::Validation(format!(
                "class {missing} is not covered by any colony"
            )));
        }
        if built.len() < 2 {
            return Err(Error::Validation(format!(
                "single colony \"{}\": at least two colonies are required so every class has an opposite pool",
                built.first().map_or("", |c| c.name.as_str())
            )));
        }

        let colony_of: Vec<usize> = owner.into_iter().map(|o| o.unwrap_or_default()).collect();
        let pools = (0..class_count)
            .map(|y| {
                (0..class_count)
                    .filter(|&j| colony_of[j] != colony_of[y])
                    .map(ClassId)
                    .collect()
            })
            .collect();

        Ok(SemanticPrior {
            class_count,
            class_names,
            colonies: built,
            colony_of,
            pools,
        })
    }

    /// Parses taxonomy-file content.
    pub fn parse(source: &str) -> Result<Self> {
        let mut class_count: Option<usize> = None;
        let mut names: Option<Vec<String>> = None;
        let mut colonies: Vec<(String, Vec<usize>)> = Vec::new();

        for (i, raw) in source.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let parse_err = |message: String| Error::Parse { line: line_no, message };
            let (key, value) = line
                .split_once(':')
                .ok_or_else(|| parse_err(format!("expected `name: values`, found \"{line}\"")))?;
            let key = key.trim();
            let value = value.trim();
            if key.is_empty() {
                return Err(parse_err("empty colony name".into()));
            }
            match key {
                "classes" => {
                    if class_count.is_some() {
                        return Err(parse_err("duplicate `classes:` header".into()));
                    }
                    let n = value
                        .parse::<usize>()
                        .map_err(|_| parse_err(format!("invalid class count \"{value}\"")))?;
                    class_count = Some(n);
                }
                "names" => {
                    if names.is_some() {
                        return Err(parse_err("duplicate `names:` header".into()));
                    }
                    names = Some(value.split(',').map(|s| s.trim().to_string()).collect());
                }
                _ => {
                    if key.chars().any(char::is_whitespace) {
                        return Err(parse_err(format!("colony name \"{key}\" contains whitespace")));
                    }
                    let mut members = Vec::new();
                    for tok in value.split(',') {
                        let tok = tok.trim();
                        if tok.is_empty() {
                            if value.is_empty() {
                                break;
                            }
                            return Err(parse_err(format!("empty class index in colony \"{key}\"")));
                        }
                        let idx = tok
                            .parse::<usize>()
                            .map_err(|_| parse_err(format!("invalid class index \"{tok}\" in colony \"{key}\"")))?;
                        members.push(idx);
                    }
                    colonies.push((key.to_string(), members));
                }
            }
        }

        let class_count = class_count.ok_or_else(|| Error::Validation("missing `classes: N` header".into()))?;
        SemanticPrior::new(class_count, names, colonies)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::read_file(path, e))?;
        SemanticPrior::parse(&text)
    }

    /// One of the bundled taxonomies, by name (see [`BUILTIN_PRIORS`]).
    pub fn builtin(name: &str) -> Option<Self> {
        let text = match name {
            "fashion-mnist" => FASHION_MNIST,
            "cifar10" => CIFAR10,
            "cifar100-sd-v1" => CIFAR100_SD_V1,
            "cifar100-sd-v2" => CIFAR100_SD_V2,
            _ => return None,
        };
        Some(SemanticPrior::parse(text).expect("bundled taxonomy is valid"))
    }

    /// Accepts either a bundled taxonomy name or a file path.
    pub fn resolve(name_or_path: &str) -> Result<Self> {
        match SemanticPrior::builtin(name_or_path) {
            Some(p) => Ok(p),
            None => SemanticPrior::from_file(name_or_path),
        }
    }

    /// Serializes to taxonomy-file text. Re-parsing yields an equal prior.
    pub fn to_text(&self) -> String {
        let mut out = format!(
            "classes: {}\nnames: {}\n",
            self.class_count,
            self.class_names.join(", ")
        );
        for colony in &self.colonies {
            let members: Vec<String> = colony.members.iter().map(|m| m.to_string()).collect();
            out.push_str(&format!("{}: {}\n", colony.name, members.join(", ")));
        }
        out
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn class_name(&self, y: ClassId) -> &str {
        &self.class_names[y.0]
    }

    /// Looks up a class by its name in the taxonomy file.
    pub fn class_by_name(&self, name: &str) -> Option<ClassId> {
        self.class_names.iter().position(|n| n == name).map(ClassId)
    }

    pub fn colonies(&self) -> &[Colony] {
        &self.colonies
    }

    /// Checks that `index` is a valid class of this prior.
    pub fn class_id(&self, index: usize) -> Result<ClassId> {
        if index < self.class_count {
            Ok(ClassId(index))
        } else {
            Err(Error::InvalidArgument(format!(
                "class {index} outside [0, {})",
                self.class_count
            )))
        }
    }

    /// Position of `y`'s colony in [`colonies`](Self::colonies).
    #[inline]
    pub fn colony_index_of(&self, y: ClassId) -> usize {
        self.colony_of[y.0]
    }

    /// The unique colony containing `y`.
    ///
    /// Panics if `y` is out of range.
    #[inline]
    pub fn colony_of(&self, y: ClassId) -> &Colony {
        &self.colonies[self.colony_of[y.0]]
    }

    /// `[c] \ colony_of(y)` in ascending order. Never empty.
    #[inline]
    pub fn opposite_pool(&self, y: ClassId) -> &[ClassId] {
        &self.pools[y.0]
    }

    /// The relation between classes: co-membership in a colony.
    #[inline]
    pub fn same_colony(&self, a: ClassId, b: ClassId) -> bool {
        self.colony_of[a.0] == self.colony_of[b.0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_by_two() -> SemanticPrior {
        SemanticPrior::new(2, None, [("a", vec![0]), ("b", vec![1])]).unwrap()
    }

    #[test]
    fn builtin_priors_parse() {
        for name in BUILTIN_PRIORS {
            let p = SemanticPrior::builtin(name).unwrap();
            assert!(p.colonies().len() >= 2, "{name}");
        }
        assert!(SemanticPrior::builtin("mnist").is_none());
    }

    #[test]
    fn fashion_mnist_has_three_colonies() {
        let p = SemanticPrior::builtin("fashion-mnist").unwrap();
        let names: Vec<_> = p.colonies().iter().map(Colony::name).collect();
        assert_eq!(names, ["clothes", "shoes", "bags"]);
        let bag = p.class_by_name("bag").unwrap();
        assert_eq!(p.colony_of(bag).members(), &[ClassId(8)]);
        let expected: Vec<ClassId> = (0..10).filter(|&i| i != 8).map(ClassId).collect();
        assert_eq!(p.opposite_pool(bag), expected.as_slice());
    }

    #[test]
    fn cifar10_cat_is_an_animal() {
        let p = SemanticPrior::builtin("cifar10").unwrap();
        let cat = p.class_by_name("cat").unwrap();
        assert_eq!(p.colony_of(cat).name(), "animals");
        assert_eq!(p.opposite_pool(cat), &[ClassId(0), ClassId(1), ClassId(8), ClassId(9)]);
    }

    #[test]
    fn forced_singleton_pool() {
        let p = two_by_two();
        assert_eq!(p.colony_of(ClassId(0)).members(), &[ClassId(0)]);
        assert_eq!(p.opposite_pool(ClassId(0)), &[ClassId(1)]);
    }

    #[test]
    fn uncovered_class_is_named() {
        let src = "classes: 10\na: 0,1,2,3\nb: 4,5,6,8,9\n";
        let err = SemanticPrior::parse(src).unwrap_err().to_string();
        assert!(err.contains("class 7"), "{err}");
    }

    #[test]
    fn single_colony_rejected() {
        let src = "classes: 3\nall: 0,1,2\n";
        let err = SemanticPrior::parse(src).unwrap_err().to_string();
        assert!(err.contains("single colony"), "{err}");
    }

    #[test]
    fn overlap_names_both_colonies() {
        let src = "classes: 3\na: 0,1\nb: 1,2\n";
        let err = SemanticPrior::parse(src).unwrap_err().to_string();
        assert!(
            err.contains("class 1") && err.contains("\"a\"") && err.contains("\"b\""),
            "{err}"
        );
    }

    #[test]
    fn empty_colony_rejected() {
        let src = "classes: 2\na: 0,1\nb:\n";
        let err = SemanticPrior::parse(src).unwrap_err().to_string();
        assert!(err.contains("empty colony \"b\""), "{err}");
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let err = SemanticPrior::parse("classes: 2\n\nnot a colony line\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 3, .. }), "{err}");
        let err = SemanticPrior::parse("classes: two\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }), "{err}");
        let err = SemanticPrior::parse("classes: 2\na: 0, x\n").unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
    }

    #[test]
    fn missing_header_and_bad_index() {
        assert!(SemanticPrior::parse("a: 0\nb: 1\n").is_err());
        let err = SemanticPrior::parse("classes: 2\na: 0\nb: 1, 2\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("class 2"), "{err}");
    }

    #[test]
    fn comments_blank_lines_and_ordering() {
        let src = "# header\n\nclasses: 4  # four\nodd: 3, 1\n\neven: 2,0\n";
        let p = SemanticPrior::parse(src).unwrap();
        assert_eq!(p.colonies()[0].members(), &[ClassId(1), ClassId(3)]);
        assert_eq!(p.class_names(), ["0", "1", "2", "3"]);
    }

    #[test]
    fn text_round_trip_is_semantically_equal() {
        for name in BUILTIN_PRIORS {
            let p = SemanticPrior::builtin(name).unwrap();
            assert_eq!(SemanticPrior::parse(&p.to_text()).unwrap(), p);
        }
    }
}
