//! Accuracy reports, confusion matrices and the report CSV.

use std::fmt::Write as _;
use std::path::Path;

use crate::models::{Checkpoint, TemplateSet, INPUT_SHAPE};
use crate::nn::{argmax, Model, Tensor};
use crate::{Error, GestureClass, Result, NUM_CLASSES};

/// Anything that maps RSA images to class probabilities.
pub trait Classifier {
    fn id(&self) -> String;

    /// Probabilities (non-negative, summing to 1) for each image.
    fn predict_batch(&self, images: &[&[f32]]) -> Result<Vec<[f64; NUM_CLASSES]>>;

    fn predict(&self, image: &[f32]) -> Result<[f64; NUM_CLASSES]> {
        Ok(self.predict_batch(&[image])?[0])
    }
}

impl Classifier for Model<f32> {
    fn id(&self) -> String {
        self.architecture().to_string()
    }

    fn predict_batch(&self, images: &[&[f32]]) -> Result<Vec<[f64; NUM_CLASSES]>> {
        if images.is_empty() {
            return Ok(Vec::new());
        }
        if self.num_classes() != NUM_CLASSES {
            return Err(Error::invalid("classifier must have 4 outputs"));
        }
        let per: usize = self.input_shape().iter().product();
        let mut data = Vec::with_capacity(per * images.len());
        for img in images {
            if img.len() != per {
                return Err(Error::invalid(format!("image has {} values, model expects {per}", img.len())));
            }
            data.extend_from_slice(img);
        }
        let mut shape = vec![images.len()];
        shape.extend_from_slice(self.input_shape());
        let probs = self.predict_proba(&Tensor::from_vec(&shape, data)?)?;
        Ok(probs
            .into_iter()
            .map(|row| {
                let mut out = [0.0; NUM_CLASSES];
                for (o, p) in out.iter_mut().zip(row) {
                    *o = p as f64;
                }
                out
            })
            .collect())
    }
}

impl Classifier for TemplateSet {
    fn id(&self) -> String {
        "template".into()
    }

    fn predict_batch(&self, images: &[&[f32]]) -> Result<Vec<[f64; NUM_CLASSES]>> {
        images.iter().map(|img| self.scores(img)).collect()
    }
}

impl Classifier for Checkpoint {
    fn id(&self) -> String {
        self.architecture().to_string()
    }

    fn predict_batch(&self, images: &[&[f32]]) -> Result<Vec<[f64; NUM_CLASSES]>> {
        match self {
            Checkpoint::Network(m) => {
                if m.input_shape() != INPUT_SHAPE {
                    return Err(Error::invalid("network does not take 128x128x3 RSA images"));
                }
                m.predict_batch(images)
            }
            Checkpoint::Template(t) => t.predict_batch(images),
        }
    }
}

/// Per-class and macro-averaged accuracy with the confusion matrix (rows truth, columns prediction).
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub model: String,
    pub per_class: [f64; NUM_CLASSES],
    /// Mean of the per-class accuracies.
    pub average: f64,
    pub confusion: [[usize; NUM_CLASSES]; NUM_CLASSES],
    pub n: usize,
}

impl EvalReport {
    pub fn from_confusion(model: impl Into<String>, confusion: [[usize; NUM_CLASSES]; NUM_CLASSES]) -> Result<Self> {
        let n = confusion.iter().flatten().sum();
        if n == 0 {
            return Err(Error::invalid("cannot report on an empty evaluation set"));
        }
        let mut per_class = [0.0; NUM_CLASSES];
        for (k, row) in confusion.iter().enumerate() {
            let total: usize = row.iter().sum();
            per_class[k] = if total > 0 { row[k] as f64 / total as f64 } else { 0.0 };
        }
        let present = confusion.iter().filter(|r| r.iter().sum::<usize>() > 0).count();
        let average = per_class
            .iter()
            .zip(&confusion)
            .filter(|(_, r)| r.iter().sum::<usize>() > 0)
            .map(|(a, _)| a)
            .sum::<f64>()
            / present as f64;
        Ok(Self {
            model: model.into(),
            per_class,
            average,
            confusion,
            n,
        })
    }

    pub fn class_count(&self, class: GestureClass) -> usize {
        self.confusion[class.index()].iter().sum()
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,accuracy,n\n");
        for g in GestureClass::ALL {
            let _ = writeln!(out, "{},{},{}", g.name(), self.per_class[g.index()], self.class_count(g));
        }
        let _ = writeln!(out, "avg,{},{}", self.average, self.n);
        out.push('\n');
        for g in GestureClass::ALL {
            let row: Vec<String> = self.confusion[g.index()].iter().map(usize::to_string).collect();
            let _ = writeln!(out, "{},{}", g.name(), row.join(","));
        }
        let _ = writeln!(out, "model,{}", self.model);
        out
    }

    pub fn from_csv(text: &str, file: &Path) -> Result<Self> {
        let mut offset = 0u64;
        let mut lines = text.split_inclusive('\n').map(|l| {
            let start = offset;
            offset += l.len() as u64;
            (start, l.trim_end_matches(['\n', '\r']))
        });
        let mut next = |what: &str| lines.next().ok_or_else(|| Error::format(file, text.len() as u64, format!("missing {what}")));
        let bad = |at: u64, msg: String| Error::format(file, at, msg);

        let (at, header) = next("header")?;
        if header != "class,accuracy,n" {
            return Err(bad(at, format!("expected header 'class,accuracy,n', got '{header}'")));
        }
        let mut per_class = [0.0; NUM_CLASSES];
        let mut counts = [0usize; NUM_CLASSES];
        for g in GestureClass::ALL {
            let (at, line) = next("class row")?;
            let f: Vec<&str> = line.split(',').collect();
            match f[..] {
                [name, acc, n] if name == g.name() => {
                    per_class[g.index()] = acc.parse().map_err(|_| bad(at, format!("bad accuracy '{acc}'")))?;
                    counts[g.index()] = n.parse().map_err(|_| bad(at, format!("bad count '{n}'")))?;
                }
                _ => return Err(bad(at, format!("expected row for {g}, got '{line}'"))),
            }
        }
        let (at, line) = next("avg row")?;
        let (average, n) = match line.split(',').collect::<Vec<_>>()[..] {
            ["avg", acc, n] => (
                acc.parse::<f64>().map_err(|_| bad(at, format!("bad accuracy '{acc}'")))?,
                n.parse::<usize>().map_err(|_| bad(at, format!("bad count '{n}'")))?,
            ),
            _ => return Err(bad(at, format!("expected avg row, got '{line}'"))),
        };
        let (at, blank) = next("blank line")?;
        if !blank.is_empty() {
            return Err(bad(at, "expected a blank line before the confusion matrix".into()));
        }
        let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
        for g in GestureClass::ALL {
            let (at, line) = next("confusion row")?;
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != NUM_CLASSES + 1 || f[0] != g.name() {
                return Err(bad(at, format!("expected confusion row for {g}, got '{line}'")));
            }
            for (c, v) in confusion[g.index()].iter_mut().zip(&f[1..]) {
                *c = v.parse().map_err(|_| bad(at, format!("bad count '{v}'")))?;
            }
            if confusion[g.index()].iter().sum::<usize>() != counts[g.index()] {
                return Err(bad(at, format!("confusion row for {g} does not sum to its count")));
            }
        }
        let (at, line) = next("model row")?;
        let model = line
            .strip_prefix("model,")
            .ok_or_else(|| bad(at, format!("expected 'model,<id>', got '{line}'")))?;
        let report = Self::from_confusion(model, confusion)?;
        if report.n != n || report.per_class != per_class || report.average != average {
            return Err(bad(0, "accuracies do not match the confusion matrix".into()));
        }
        Ok(report)
    }
}

/// Evaluates in batches; predictions take the first class among equal probabilities.
pub fn evaluate<'a, C, I>(classifier: &C, samples: I, batch_size: usize) -> Result<EvalReport>
where
    C: Classifier + Sync + ?Sized,
    I: IntoIterator<Item = (&'a [f32], GestureClass)>,
{
    let samples: Vec<_> = samples.into_iter().collect();
    if samples.is_empty() {
        return Err(Error::invalid("cannot evaluate on an empty set"));
    }
    let batches: Vec<_> = samples.chunks(batch_size.max(1)).collect();
    let predict = |chunk: &&[(&[f32], GestureClass)]| -> Result<Vec<usize>> {
        let imgs: Vec<&[f32]> = chunk.iter().map(|(x, _)| *x).collect();
        Ok(classifier.predict_batch(&imgs)?.iter().map(|p| argmax(p)).collect())
    };
    #[cfg(feature = "parallel")]
    let preds: Vec<Vec<usize>> = {
        use rayon::prelude::*;
        batches.par_iter().map(predict).collect::<Result<_>>()?
    };
    #[cfg(not(feature = "parallel"))]
    let preds: Vec<Vec<usize>> = batches.iter().map(predict).collect::<Result<_>>()?;

    let mut confusion = [[0usize; NUM_CLASSES]; NUM_CLASSES];
    for ((_, truth), pred) in samples.iter().zip(preds.into_iter().flatten()) {
        confusion[truth.index()][pred] += 1;
    }
    EvalReport::from_confusion(classifier.id(), confusion)
}

/// One off-diagonal confusion cell.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Confusion {
    pub truth: GestureClass,
    pub predicted: GestureClass,
    pub count: usize,
    /// Fraction of `truth` samples that went to `predicted`.
    pub rate: f64,
}

/// Non-zero off-diagonal cells, most frequent first.
pub fn error_breakdown(report: &EvalReport) -> Vec<Confusion> {
    let mut out = Vec::new();
    for t in GestureClass::ALL {
        let total = report.class_count(t);
        for p in GestureClass::ALL {
            let count = report.confusion[t.index()][p.index()];
            if t != p && count > 0 {
                out.push(Confusion {
                    truth: t,
                    predicted: p,
                    count,
                    rate: count as f64 / total as f64,
                });
            }
        }
    }
    out.sort_by(|a, b| b.rate.total_cmp(&a.rate).then(b.count.cmp(&a.count)));
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    struct Fixed(fn(&[f32]) -> usize);

    impl Classifier for Fixed {
        fn id(&self) -> String {
            "fixed".into()
        }

        fn predict_batch(&self, images: &[&[f32]]) -> Result<Vec<[f64; NUM_CLASSES]>> {
            Ok(images
                .iter()
                .map(|x| {
                    let mut p = [0.0; NUM_CLASSES];
                    p[(self.0)(x)] = 1.0;
                    p
                })
                .collect())
        }
    }

    fn balanced() -> Vec<(Vec<f32>, GestureClass)> {
        (0..40).map(|i| (vec![(i % 4) as f32], GestureClass::ALL[i % 4])).collect()
    }

    #[test]
    fn perfect_predictor_is_diagonal() {
        let data = balanced();
        let r = evaluate(&Fixed(|x| x[0] as usize), data.iter().map(|(x, g)| (x.as_slice(), *g)), 7).unwrap();
        assert_eq!(r.average, 1.0);
        for (i, row) in r.confusion.iter().enumerate() {
            assert_eq!(row.iter().sum::<usize>(), row[i]);
        }
        assert!(error_breakdown(&r).is_empty());
    }

    #[test]
    fn constant_predictor_scores_quarter() {
        let data = balanced();
        let r = evaluate(&Fixed(|_| 0), data.iter().map(|(x, g)| (x.as_slice(), *g)), 5).unwrap();
        assert!((r.average - 0.25).abs() < 1e-12);
        assert_eq!(r.per_class, [1.0, 0.0, 0.0, 0.0]);
        let errs = error_breakdown(&r);
        assert_eq!(errs.len(), 3);
        assert!(errs.iter().all(|e| e.predicted == GestureClass::Left && e.rate == 1.0));
    }

    #[test]
    fn single_off_diagonal_cell() {
        let mut m = [[5usize; 4]; 4];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                if i != j {
                    *v = 0;
                }
            }
        }
        m[2][0] = 3;
        let r = EvalReport::from_confusion("x", m).unwrap();
        let e = error_breakdown(&r);
        assert_eq!(e.len(), 1);
        assert_eq!((e[0].truth, e[0].predicted, e[0].count), (GestureClass::Click, GestureClass::Left, 3));
    }

    #[test]
    fn empty_set_is_rejected() {
        assert!(evaluate(&Fixed(|_| 0), std::iter::empty(), 4).is_err());
    }

    #[test]
    fn csv_layout() {
        let r = EvalReport::from_confusion("resnet20", [[2, 0, 0, 0], [1, 1, 0, 0], [0, 0, 2, 0], [0, 0, 0, 2]]).unwrap();
        let csv = r.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "class,accuracy,n");
        assert_eq!(lines[2], "RIGHT,0.5,2");
        assert_eq!(lines[5], "avg,0.875,8");
        assert_eq!(lines[6], "");
        assert_eq!(lines[8], "RIGHT,1,1,0,0");
        assert_eq!(lines[11], "model,resnet20");
    }

    #[test]
    fn tampered_csv_is_rejected() {
        let r = EvalReport::from_confusion("m", [[2, 0, 0, 0], [1, 1, 0, 0], [0, 0, 2, 0], [0, 0, 0, 2]]).unwrap();
        let csv = r.to_csv().replace("RIGHT,1,1,0,0", "RIGHT,1,2,0,0");
        assert!(matches!(EvalReport::from_csv(&csv, Path::new("r.csv")), Err(Error::Format { .. })));
    }

    proptest! {
        #[test]
        fn csv_round_trip_and_macro_average(m in prop::array::uniform4(prop::array::uniform4(0usize..50))) {
            prop_assume!(m.iter().flatten().sum::<usize>() > 0);
            let r = EvalReport::from_confusion("vgg10", m).unwrap();
            let back = EvalReport::from_csv(&r.to_csv(), Path::new("r.csv")).unwrap();
            prop_assert_eq!(&back, &r);
            let rows: Vec<usize> = m.iter().map(|row| row.iter().sum()).collect();
            let diag: Vec<f64> = (0..4).filter(|&k| rows[k] > 0).map(|k| m[k][k] as f64 / rows[k] as f64).collect();
            let mean = diag.iter().sum::<f64>() / diag.len() as f64;
            prop_assert!((r.average - mean).abs() < 1e-9);
        }
    }
}
