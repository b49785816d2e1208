//! Latent-feature classification, voxel IoU, image-to-shape retrieval
//! scoring, and nearest-neighbour lookup.

mod svm;

pub use svm::{select_hyperparameters, stratified_folds, RbfSvm, SvmSelection, C_GRID, GAMMA_GRID};

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::archive::{load_archive, save_archive, Archive, NamedTensor};
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::model::Vsl;
use crate::voxel::{ImageSample, VoxelGrid};

pub const DEFAULT_THRESHOLD: f32 = 0.5;
const FEATURES_KIND: &str = "features";

/// One latent feature vector per shape with its category.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureMatrix {
    pub rows: Vec<Vec<f32>>,
    pub labels: Vec<String>,
}

impl FeatureMatrix {
    pub fn new(rows: Vec<Vec<f32>>, labels: Vec<String>) -> Result<Self> {
        if rows.len() != labels.len() {
            return Err(Error::shape(format!("{} rows but {} labels", rows.len(), labels.len())));
        }
        if let Some(first) = rows.first() {
            if rows.iter().any(|r| r.len() != first.len()) {
                return Err(Error::shape("feature rows differ in length"));
            }
        }
        Ok(FeatureMatrix { rows, labels })
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, Vec::len)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn to_archive(&self) -> Archive {
        Archive {
            kind: FEATURES_KIND.into(),
            metadata: serde_json::json!({ "labels": self.labels }),
            tensors: vec![NamedTensor {
                name: "features".into(),
                shape: vec![self.len(), self.dim()],
                data: self.rows.concat(),
            }],
        }
    }

    pub fn from_archive(a: &Archive) -> Result<Self> {
        if a.kind != FEATURES_KIND {
            return Err(Error::Format(format!("archive holds {:?}, not features", a.kind)));
        }
        let labels: Vec<String> = serde_json::from_value(a.metadata["labels"].clone())?;
        let t = a
            .get("features")
            .ok_or_else(|| Error::Format("feature archive lacks the features tensor".into()))?;
        let [n, d] = t.shape[..] else {
            return Err(Error::Format("features tensor must be 2-D".into()));
        };
        let rows = if d == 0 { vec![Vec::new(); n] } else { t.data.chunks(d).map(<[f32]>::to_vec).collect() };
        FeatureMatrix::new(rows, labels)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        save_archive(&self.to_archive(), path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_archive(&load_archive(path)?)
    }
}

/// Concatenated posterior means `[z0, z1, …, zn]` for every grid.
pub fn extract_features(model: &Vsl<f32>, grids: &[&VoxelGrid], labels: Vec<String>, exec: Exec) -> Result<FeatureMatrix> {
    let rows = exec.try_map(grids, |_, g| model.encode_mean(g))?;
    FeatureMatrix::new(rows, labels)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassifyReport {
    pub accuracy: f64,
    pub cv_accuracy: f64,
    pub c: f64,
    pub gamma: f64,
    pub n_train: usize,
    pub n_test: usize,
    pub n_classes: usize,
    pub feature_dim: usize,
}

/// RBF-SVM accuracy on `test` after 3-fold model selection on `train`.
pub fn classify_features(train: &FeatureMatrix, test: &FeatureMatrix, exec: Exec) -> Result<ClassifyReport> {
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data("classification needs non-empty train and test sets".into()));
    }
    if train.dim() != test.dim() {
        return Err(Error::shape(format!(
            "train features have {} dims, test {}",
            train.dim(),
            test.dim()
        )));
    }
    let classes: Vec<&String> = {
        let mut c: Vec<&String> = train.labels.iter().collect();
        c.sort();
        c.dedup();
        c
    };
    if classes.len() < 2 {
        return Err(Error::Data("training set has a single class".into()));
    }
    let index = |l: &String| classes.iter().position(|c| *c == l);
    let to_f64 = |m: &FeatureMatrix| -> Vec<Vec<f64>> {
        m.rows.iter().map(|r| r.iter().map(|&v| v as f64).collect()).collect()
    };
    let xtr = to_f64(train);
    let ytr: Vec<usize> = train.labels.iter().map(|l| index(l).expect("from train")).collect();
    let sel = select_hyperparameters(&xtr, &ytr, classes.len(), exec)?;
    let model = RbfSvm::fit(&xtr, &ytr, classes.len(), sel.c, sel.gamma)?;
    // a test label unseen in training can never be predicted correctly
    let xte = to_f64(test);
    let hits = xte
        .iter()
        .zip(&test.labels)
        .filter(|(r, l)| index(l) == Some(model.predict(r)))
        .count();
    Ok(ClassifyReport {
        accuracy: hits as f64 / test.len() as f64,
        cv_accuracy: sel.cv_accuracy,
        c: sel.c,
        gamma: sel.gamma,
        n_train: train.len(),
        n_test: test.len(),
        n_classes: classes.len(),
        feature_dim: train.dim(),
    })
}

/// |pred ∧ gt| / |pred ∨ gt|, 1 when both are empty.
pub fn iou(pred: &VoxelGrid, gt: &VoxelGrid) -> Result<f64> {
    if pred.dims() != gt.dims() {
        return Err(Error::shape(format!("IoU of {:?} and {:?} grids", pred.dims(), gt.dims())));
    }
    let (mut inter, mut union) = (0usize, 0usize);
    for (&a, &b) in pred.cells().iter().zip(gt.cells()) {
        inter += (a && b) as usize;
        union += (a || b) as usize;
    }
    Ok(if union == 0 { 1.0 } else { inter as f64 / union as f64 })
}

/// IoU of probabilities binarized at `threshold` (`p ≥ threshold` is occupied).
pub fn iou_probs(probs: &[f32], gt: &VoxelGrid, threshold: f32) -> Result<f64> {
    iou(&VoxelGrid::from_probabilities(gt.dims(), probs, threshold)?, gt)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleScore {
    pub category: String,
    pub iou: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IoUReport {
    pub per_category: BTreeMap<String, f64>,
    /// Unweighted mean over categories.
    pub mean: f64,
    pub samples: Vec<SampleScore>,
}

impl IoUReport {
    pub fn from_scores(samples: Vec<SampleScore>) -> Self {
        let mut acc: BTreeMap<String, (f64, usize)> = BTreeMap::new();
        for s in &samples {
            let e = acc.entry(s.category.clone()).or_default();
            e.0 += s.iou;
            e.1 += 1;
        }
        let per_category: BTreeMap<String, f64> = acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
        let mean = if per_category.is_empty() {
            0.0
        } else {
            per_category.values().sum::<f64>() / per_category.len() as f64
        };
        IoUReport {
            per_category,
            mean,
            samples,
        }
    }
}

/// A ground-truth pair for retrieval scoring.
#[derive(Clone, Copy, Debug)]
pub struct RetrievalPair<'a> {
    pub category: &'a str,
    pub image: &'a ImageSample,
    pub truth: &'a VoxelGrid,
}

/// Scores `predict(image)` against each ground truth. Categories listed in
/// `expected` with no pairs are left out with a warning.
pub fn evaluate_retrieval<F>(
    pairs: &[RetrievalPair<'_>],
    expected: &[String],
    threshold: f32,
    exec: Exec,
    predict: F,
) -> Result<IoUReport>
where
    F: Fn(&ImageSample) -> Result<Vec<f32>> + Sync,
{
    for c in expected {
        if !pairs.iter().any(|p| p.category == c) {
            log::warn!("category {c} has no samples; omitted from the report");
        }
    }
    let samples = exec.try_map(pairs, |_, p| {
        let probs = predict(p.image)?;
        Ok::<_, Error>(SampleScore {
            category: p.category.to_string(),
            iou: iou_probs(&probs, p.truth, threshold)?,
        })
    })?;
    Ok(IoUReport::from_scores(samples))
}

/// [`evaluate_retrieval`] with the model's image-to-voxel path.
pub fn evaluate_model_retrieval(
    model: &Vsl<f32>,
    pairs: &[RetrievalPair<'_>],
    expected: &[String],
    threshold: f32,
    exec: Exec,
) -> Result<IoUReport> {
    evaluate_retrieval(pairs, expected, threshold, exec, |img| model.reconstruct_from_image(img))
}

/// Corpus entry with the highest IoU against the binarized query; the
/// lowest index wins ties.
pub fn nearest_neighbor(query: &[f32], corpus: &[VoxelGrid], threshold: f32) -> Result<(usize, f64)> {
    let first = corpus.first().ok_or_else(|| Error::Data("empty corpus".into()))?;
    let q = VoxelGrid::from_probabilities(first.dims(), query, threshold)?;
    let mut best = (0, f64::NEG_INFINITY);
    for (i, g) in corpus.iter().enumerate() {
        let s = iou(&q, g)?;
        if s > best.1 {
            best = (i, s);
        }
    }
    Ok(best)
}

/// Nearest corpus code by Euclidean distance; returns index and distance.
pub fn nearest_neighbor_latent(query: &[f32], corpus: &[Vec<f32>]) -> Result<(usize, f64)> {
    if corpus.is_empty() {
        return Err(Error::Data("empty corpus".into()));
    }
    let mut best = (0, f64::INFINITY);
    for (i, z) in corpus.iter().enumerate() {
        if z.len() != query.len() {
            return Err(Error::shape("corpus code length differs from the query"));
        }
        let d = query
            .iter()
            .zip(z)
            .map(|(a, b)| ((a - b) as f64).powi(2))
            .sum::<f64>()
            .sqrt();
        if d < best.1 {
            best = (i, d);
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::tiny_config;
    use proptest::prelude::*;

    fn grid_with(cells: &[usize]) -> VoxelGrid {
        let mut g = VoxelGrid::cube(3).unwrap();
        for &c in cells {
            g.cells_mut()[c] = true;
        }
        g
    }

    #[test]
    fn iou_examples() {
        let a = grid_with(&[0, 1]);
        let b = grid_with(&[1, 2]);
        assert!((iou(&a, &b).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(iou(&a, &a).unwrap(), 1.0);
        assert_eq!(iou(&grid_with(&[0]), &grid_with(&[5])).unwrap(), 0.0);
        assert_eq!(iou(&grid_with(&[]), &grid_with(&[])).unwrap(), 1.0);
        assert!(iou(&a, &VoxelGrid::cube(4).unwrap()).is_err());
    }

    #[test]
    fn nearest_neighbor_examples() {
        let corpus = vec![grid_with(&[0, 1, 2, 3, 4]), grid_with(&[0, 1, 2])];
        let q: Vec<f32> = grid_with(&[0, 1, 2]).to_f32();
        assert_eq!(nearest_neighbor(&q, &corpus, 0.5).unwrap(), (1, 1.0));
        // IoU 0.4 vs 0.6
        let corpus = vec![grid_with(&[0, 1, 5, 6, 7]), grid_with(&[0, 1, 2, 8, 9])];
        let q = grid_with(&[0, 1, 2]).to_f32();
        let (i, s) = nearest_neighbor(&q, &corpus, 0.5).unwrap();
        assert_eq!(i, 1);
        assert!((s - 0.6).abs() < 1e-12);
        let single = vec![grid_with(&[20])];
        assert_eq!(nearest_neighbor(&q, &single, 0.5).unwrap().0, 0);
        assert!(nearest_neighbor(&q, &[], 0.5).is_err());
        // ties keep the lowest index
        let tie = vec![grid_with(&[0]), grid_with(&[0])];
        assert_eq!(nearest_neighbor(&grid_with(&[0]).to_f32(), &tie, 0.5).unwrap().0, 0);
        let codes = vec![vec![0.0, 3.0], vec![1.0, 1.0]];
        assert_eq!(nearest_neighbor_latent(&[1.0, 0.0], &codes).unwrap(), (1, 1.0));
    }

    #[test]
    fn retrieval_stubs() {
        let img = ImageSample::new(2, vec![0.0; 12], "a").unwrap();
        let g1 = grid_with(&[0, 4]);
        let g2 = grid_with(&[7]);
        let pairs = [
            RetrievalPair { category: "a", image: &img, truth: &g1 },
            RetrievalPair { category: "b", image: &img, truth: &g2 },
            RetrievalPair { category: "b", image: &img, truth: &g1 },
        ];
        let truths = [g1.to_f32(), g2.to_f32(), g1.to_f32()];
        let counter = std::sync::atomic::AtomicUsize::new(0);
        // perfect stub keyed on the pair order
        let perfect = evaluate_retrieval(&pairs, &[], 0.5, Exec::Sequential, |_| {
            Ok(truths[counter.fetch_add(1, std::sync::atomic::Ordering::SeqCst)].clone())
        })
        .unwrap();
        assert!(perfect.samples.iter().all(|s| s.iou == 1.0));
        assert_eq!(perfect.mean, 1.0);
        let empty = evaluate_retrieval(&pairs, &["c".into()], 0.5, Exec::Parallel, |_| Ok(vec![0.0; 27])).unwrap();
        assert!(empty.samples.iter().all(|s| s.iou == 0.0));
        assert_eq!(empty.per_category.len(), 2);
    }

    #[test]
    fn report_mean_is_over_categories() {
        let r = IoUReport::from_scores(vec![
            SampleScore { category: "a".into(), iou: 1.0 },
            SampleScore { category: "b".into(), iou: 0.0 },
            SampleScore { category: "b".into(), iou: 0.5 },
        ]);
        assert_eq!(r.per_category["b"], 0.25);
        assert!((r.mean - 0.625).abs() < 1e-15);
    }

    #[test]
    fn features_roundtrip_and_order_invariance() {
        let model = Vsl::<f32>::new(tiny_config(false), 1).unwrap();
        let mut g1 = VoxelGrid::cube(7).unwrap();
        g1.cells_mut()[100] = true;
        let g2 = VoxelGrid::cube(7).unwrap();
        let f = extract_features(&model, &[&g1, &g2, &g1], vec!["x".into(), "y".into(), "x".into()], Exec::Parallel)
            .unwrap();
        assert_eq!(f.dim(), 7);
        assert_eq!(f.rows[0], f.rows[2]);
        let r = extract_features(&model, &[&g2, &g1], vec!["y".into(), "x".into()], Exec::Sequential).unwrap();
        assert_eq!(r.rows[1], f.rows[0]);
        let back = FeatureMatrix::from_archive(&f.to_archive()).unwrap();
        assert_eq!(back, f);
    }

    #[test]
    fn classify_rejects_single_class() {
        let m = FeatureMatrix::new(vec![vec![0.0], vec![1.0]], vec!["a".into(), "a".into()]).unwrap();
        assert!(classify_features(&m, &m, Exec::Sequential).is_err());
    }

    #[test]
    fn classify_separable_blobs() {
        let mut rows = Vec::new();
        let mut labels = Vec::new();
        for i in 0..30 {
            let c = i % 2;
            rows.push(vec![c as f32 * 4.0 + (i as f32 * 0.37).sin(), (i as f32 * 0.11).cos()]);
            labels.push(format!("c{c}"));
        }
        let m = FeatureMatrix::new(rows, labels).unwrap();
        let r = classify_features(&m, &m, Exec::Sequential).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.n_classes, 2);
    }

    fn set_oracle(a: &[bool], b: &[bool]) -> f64 {
        use std::collections::HashSet;
        let sa: HashSet<usize> = (0..a.len()).filter(|&i| a[i]).collect();
        let sb: HashSet<usize> = (0..b.len()).filter(|&i| b[i]).collect();
        let u = sa.union(&sb).count();
        if u == 0 {
            1.0
        } else {
            sa.intersection(&sb).count() as f64 / u as f64
        }
    }

    proptest! {
        #[test]
        fn iou_matches_set_oracle(a in proptest::collection::vec(any::<bool>(), 512),
                                   b in proptest::collection::vec(any::<bool>(), 512)) {
            let ga = VoxelGrid::from_cells([8; 3], a.clone()).unwrap();
            let gb = VoxelGrid::from_cells([8; 3], b.clone()).unwrap();
            let s = iou(&ga, &gb).unwrap();
            prop_assert_eq!(s, set_oracle(&a, &b));
            prop_assert_eq!(s, iou(&gb, &ga).unwrap());
            prop_assert!((0.0..=1.0).contains(&s));
            prop_assert_eq!(s == 1.0, a == b);
        }

        #[test]
        fn iou_drops_as_cells_are_flipped(a in proptest::collection::vec(any::<bool>(), 64),
                                          flips in proptest::collection::vec(0usize..64, 1..10)) {
            let ga = VoxelGrid::from_cells([4; 3], a.clone()).unwrap();
            let mut b = a.clone();
            let mut last = 1.0;
            for f in flips {
                if b[f] != a[f] { continue; }
                b[f] = !b[f];
                let s = iou(&ga, &VoxelGrid::from_cells([4; 3], b.clone()).unwrap()).unwrap();
                prop_assert!(s <= last);
                last = s;
            }
        }
    }
}
