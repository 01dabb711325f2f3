//! The 30-folder dataset layout: one directory per category, named by its
//! slug (`01_portrait` … `30_monitor_screen`), images inside.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use scenedet_core::labels::index_of_slug;
use scenedet_core::{CATEGORIES, NUM_CLASSES};

use crate::error::{Error, Result};
use crate::io::is_image_path;

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset {
    pub root: PathBuf,
    /// Sorted by path.
    pub items: Vec<(PathBuf, usize)>,
    pub counts: [usize; NUM_CLASSES],
    pub warnings: Vec<String>,
}

impl LabeledDataset {
    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn paths(&self) -> impl Iterator<Item = &Path> {
        self.items.iter().map(|(p, _)| p.as_path())
    }

    pub fn labels(&self) -> Vec<usize> {
        self.items.iter().map(|&(_, l)| l).collect()
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(entry.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

/// Unknown directory names and an empty tree are errors. Missing categories
/// and non-image files only produce warnings.
pub fn load_dataset(root: &Path) -> Result<LabeledDataset> {
    let mut items = Vec::new();
    let mut counts = [0usize; NUM_CLASSES];
    let mut warnings = Vec::new();
    let mut seen = [false; NUM_CLASSES];
    for path in sorted_entries(root)? {
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("").to_owned();
        if !path.is_dir() {
            warnings.push(format!("skipping file outside category folders: {}", path.display()));
            continue;
        }
        let class = index_of_slug(&name)
            .ok_or_else(|| Error::Dataset(format!("{}: unknown category directory {name:?}", root.display())))?;
        seen[class] = true;
        for file in sorted_entries(&path)? {
            if file.is_file() && is_image_path(&file) {
                items.push((file, class));
                counts[class] += 1;
            } else {
                warnings.push(format!("skipping non-image entry: {}", file.display()));
            }
        }
    }
    for (i, present) in seen.iter().enumerate() {
        if !present {
            warnings.push(format!("category {} has no directory", CATEGORIES[i].slug));
        }
    }
    if items.is_empty() {
        return Err(Error::Dataset(format!("{}: no images found", root.display())));
    }
    items.sort();
    Ok(LabeledDataset { root: root.to_owned(), items, counts, warnings })
}

type Items = Vec<(PathBuf, usize)>;

/// Stratified seeded split: in each class, `round(n · holdout)` images go to
/// the second part, at least one when the class has two or more.
pub fn split_dataset(ds: &LabeledDataset, holdout: f64, seed: u64) -> (Items, Items) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut keep, mut held) = (Vec::new(), Vec::new());
    for class in 0..NUM_CLASSES {
        let mut members: Vec<_> = ds.items.iter().filter(|(_, l)| *l == class).cloned().collect();
        members.shuffle(&mut rng);
        let n = members.len();
        let mut k = (n as f64 * holdout).round() as usize;
        if n >= 2 {
            k = k.clamp(1, n - 1);
        } else {
            k = 0;
        }
        held.extend(members.drain(..k));
        keep.extend(members);
    }
    keep.sort();
    held.sort();
    (keep, held)
}

/// Every image below `dir`, recursively, sorted by path.
pub fn image_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_owned()];
    while let Some(d) = stack.pop() {
        for p in sorted_entries(&d)? {
            if p.is_dir() {
                stack.push(p);
            } else if is_image_path(&p) {
                out.push(p);
            }
        }
    }
    out.sort();
    Ok(out)
}

/// At most `max` paths, evenly spaced through the sorted list so every part
/// of a category-ordered tree is represented.
pub fn sample_evenly(paths: &[PathBuf], max: usize) -> Vec<PathBuf> {
    if paths.len() <= max {
        return paths.to_vec();
    }
    (0..max).map(|i| paths[i * paths.len() / max].clone()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn touch(p: &Path) {
        fs::create_dir_all(p.parent().unwrap()).unwrap();
        fs::write(p, b"P6\n1 1\n255\n\0\0\0").unwrap();
    }

    #[test]
    fn full_tree() {
        let dir = tempfile::tempdir().unwrap();
        for c in CATEGORIES {
            touch(&dir.path().join(c.slug).join("b.ppm"));
            touch(&dir.path().join(c.slug).join("a.ppm"));
        }
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.len(), 60);
        assert_eq!(ds.counts, [2; 30]);
        assert!(ds.warnings.is_empty());
        assert!(ds.items.windows(2).all(|w| w[0].0 < w[1].0));
        assert!(ds.items[0].0.ends_with("01_portrait/a.ppm"));
    }

    #[test]
    fn unknown_directory_is_named() {
        let dir = tempfile::tempdir().unwrap();
        touch(&dir.path().join("01_portrait/a.ppm"));
        touch(&dir.path().join("not_a_scene/a.ppm"));
        let e = load_dataset(dir.path()).unwrap_err().to_string();
        assert!(e.contains("not_a_scene"), "{e}");
    }

    #[test]
    fn subset_warns_for_missing_categories() {
        let dir = tempfile::tempdir().unwrap();
        for slug in ["01_portrait", "08_beach", "29_qr_code"] {
            touch(&dir.path().join(slug).join("x.png"));
        }
        fs::write(dir.path().join("08_beach/notes.txt"), b"").unwrap();
        let ds = load_dataset(dir.path()).unwrap();
        assert_eq!(ds.len(), 3);
        let missing = ds.warnings.iter().filter(|w| w.contains("has no directory")).count();
        assert_eq!(missing, 27);
        assert!(ds.warnings.iter().any(|w| w.contains("notes.txt")));
    }

    #[test]
    fn empty_tree_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        fs::create_dir(dir.path().join("05_cat")).unwrap();
        assert!(load_dataset(dir.path()).is_err());
    }

    #[test]
    fn split_is_stratified_and_seeded() {
        let dir = tempfile::tempdir().unwrap();
        for c in CATEGORIES {
            for i in 0..10 {
                touch(&dir.path().join(c.slug).join(format!("{i}.ppm")));
            }
        }
        let ds = load_dataset(dir.path()).unwrap();
        let (train, test) = split_dataset(&ds, 0.1, 7);
        assert_eq!((train.len(), test.len()), (270, 30));
        for class in 0..30 {
            assert_eq!(test.iter().filter(|(_, l)| *l == class).count(), 1);
        }
        assert_eq!(split_dataset(&ds, 0.1, 7), (train.clone(), test.clone()));
        assert_ne!(split_dataset(&ds, 0.1, 8).1, test);
    }

    #[test]
    fn even_sampling() {
        let paths: Vec<PathBuf> = (0..10).map(|i| PathBuf::from(format!("{i}"))).collect();
        let s = sample_evenly(&paths, 5);
        assert_eq!(s, ["0", "2", "4", "6", "8"].map(PathBuf::from));
        assert_eq!(sample_evenly(&paths, 100).len(), 10);
    }
}
