//! Pixel accuracy, mean IoU and panoptic quality.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use crate::catalog::ClassCatalog;
use crate::error::{Error, Result};
use crate::grid::{PanopticMap, SemanticMap, VOID_ID, VOID_PANOPTIC};

/// Which classes the mean IoU averages over.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum MiouUniverse {
    /// Classes that occur in the ground truth or the prediction.
    #[default]
    Present,
    /// Every catalog class; a class absent from both counts as IoU 0.
    Catalog,
}

/// Counts of `(gt class, predicted class)` over non-void ground truth.
/// Predicted void is tracked separately and counts as a miss.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConfusionMatrix {
    classes: usize,
    counts: Vec<u64>,
    pred_void: Vec<u64>,
}

impl ConfusionMatrix {
    pub fn new(classes: usize) -> Self {
        Self {
            classes,
            counts: vec![0; classes * classes],
            pred_void: vec![0; classes],
        }
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self, gt: u16, pred: u16) -> u64 {
        self.counts[gt as usize * self.classes + pred as usize]
    }

    pub fn accumulate(&mut self, pred: &SemanticMap, gt: &SemanticMap) -> Result<()> {
        if !pred.same_hw(gt) {
            return Err(Error::ShapeMismatch(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        let n = self.classes;
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g == VOID_ID {
                continue;
            }
            if g as usize >= n || (p != VOID_ID && p as usize >= n) {
                return Err(Error::InvalidLabel(format!("class pair ({g}, {p}) outside {n} classes")));
            }
            if p == VOID_ID {
                self.pred_void[g as usize] += 1;
            } else {
                self.counts[g as usize * n + p as usize] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &ConfusionMatrix) -> Result<()> {
        if other.classes != self.classes {
            return Err(Error::ShapeMismatch("confusion matrices of different sizes".into()));
        }
        self.counts.iter_mut().zip(&other.counts).for_each(|(a, b)| *a += b);
        self.pred_void.iter_mut().zip(&other.pred_void).for_each(|(a, b)| *a += b);
        Ok(())
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum::<u64>() + self.pred_void.iter().sum::<u64>()
    }

    /// Correct pixels over non-void ground-truth pixels; 0 when empty.
    pub fn accuracy(&self) -> f64 {
        let total = self.total();
        if total == 0 {
            return 0.0;
        }
        let trace: u64 = (0..self.classes).map(|c| self.counts[c * self.classes + c]).sum();
        trace as f64 / total as f64
    }

    /// Per-class IoU; `None` for classes absent from both maps.
    pub fn iou(&self) -> Vec<Option<f64>> {
        let n = self.classes;
        (0..n)
            .map(|c| {
                let tp = self.counts[c * n + c];
                let gt_total: u64 = self.counts[c * n..(c + 1) * n].iter().sum::<u64>() + self.pred_void[c];
                let pred_total: u64 = (0..n).map(|g| self.counts[g * n + c]).sum();
                let union = gt_total + pred_total - tp;
                (union > 0).then(|| tp as f64 / union as f64)
            })
            .collect()
    }

    pub fn miou(&self, universe: MiouUniverse) -> f64 {
        let ious = self.iou();
        let values: Vec<f64> = match universe {
            MiouUniverse::Present => ious.into_iter().flatten().collect(),
            MiouUniverse::Catalog => ious.into_iter().map(|v| v.unwrap_or(0.0)).collect(),
        };
        if values.is_empty() {
            0.0
        } else {
            values.iter().sum::<f64>() / values.len() as f64
        }
    }
}

/// Per-class matching tallies.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PqCounts {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub iou_sum: f64,
}

impl PqCounts {
    fn denom(&self) -> f64 {
        self.tp as f64 + 0.5 * self.fp as f64 + 0.5 * self.fn_ as f64
    }

    pub fn is_empty(&self) -> bool {
        self.tp + self.fp + self.fn_ == 0
    }

    pub fn pq(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.iou_sum / self.denom()
        }
    }

    pub fn sq(&self) -> f64 {
        if self.tp == 0 {
            0.0
        } else {
            self.iou_sum / self.tp as f64
        }
    }

    pub fn rq(&self) -> f64 {
        if self.is_empty() {
            0.0
        } else {
            self.tp as f64 / self.denom()
        }
    }
}

/// Mergeable panoptic-quality accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct PqAccumulator {
    per_class: Vec<PqCounts>,
}

impl PqAccumulator {
    pub fn new(classes: usize) -> Self {
        Self {
            per_class: vec![PqCounts::default(); classes],
        }
    }

    pub fn per_class(&self) -> &[PqCounts] {
        &self.per_class
    }

    pub fn merge(&mut self, other: &PqAccumulator) -> Result<()> {
        if other.per_class.len() != self.per_class.len() {
            return Err(Error::ShapeMismatch("PQ accumulators of different sizes".into()));
        }
        for (a, b) in self.per_class.iter_mut().zip(&other.per_class) {
            a.tp += b.tp;
            a.fp += b.fp;
            a.fn_ += b.fn_;
            a.iou_sum += b.iou_sum;
        }
        Ok(())
    }

    /// Matches the segments of one image pair. A segment is a distinct
    /// panoptic entry; a pair matches when it shares a class and its IoU,
    /// with the prediction's void-ground-truth pixels left out of the union,
    /// exceeds 0.5. Unmatched predictions that are mostly void ground truth
    /// are not counted as false positives.
    pub fn add(&mut self, pred: &PanopticMap, gt: &PanopticMap, catalog: &ClassCatalog) -> Result<()> {
        if !pred.same_hw(gt) {
            return Err(Error::ShapeMismatch(format!(
                "prediction {}x{} vs ground truth {}x{}",
                pred.height(),
                pred.width(),
                gt.height(),
                gt.width()
            )));
        }
        pred.validate(catalog)?;
        gt.validate(catalog)?;
        if catalog.len() != self.per_class.len() {
            return Err(Error::ShapeMismatch("catalog does not match the accumulator".into()));
        }
        let mut pred_area: BTreeMap<u32, u64> = BTreeMap::new();
        let mut gt_area: BTreeMap<u32, u64> = BTreeMap::new();
        let mut pred_void: BTreeMap<u32, u64> = BTreeMap::new();
        let mut inter: BTreeMap<(u32, u32), u64> = BTreeMap::new();
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            if g != VOID_PANOPTIC {
                *gt_area.entry(g).or_default() += 1;
            }
            if p == VOID_PANOPTIC {
                continue;
            }
            *pred_area.entry(p).or_default() += 1;
            if g == VOID_PANOPTIC {
                *pred_void.entry(p).or_default() += 1;
            } else {
                *inter.entry((p, g)).or_default() += 1;
            }
        }
        let class = |e: u32| PanopticMap::decode(e).0 as usize;
        let mut pred_matched: BTreeMap<u32, bool> = pred_area.keys().map(|&k| (k, false)).collect();
        let mut gt_matched: BTreeMap<u32, bool> = gt_area.keys().map(|&k| (k, false)).collect();
        for (&(p, g), &i) in &inter {
            if class(p) != class(g) {
                continue;
            }
            let union = pred_area[&p] + gt_area[&g] - i - pred_void.get(&p).copied().unwrap_or(0);
            let iou = i as f64 / union as f64;
            if iou > 0.5 {
                let c = &mut self.per_class[class(g)];
                c.tp += 1;
                c.iou_sum += iou;
                pred_matched.insert(p, true);
                gt_matched.insert(g, true);
            }
        }
        for (&g, &m) in &gt_matched {
            if !m {
                self.per_class[class(g)].fn_ += 1;
            }
        }
        for (&p, &m) in &pred_matched {
            if m {
                continue;
            }
            let void = pred_void.get(&p).copied().unwrap_or(0);
            if 2 * void > pred_area[&p] {
                continue;
            }
            self.per_class[class(p)].fp += 1;
        }
        Ok(())
    }

    pub fn report(&self, catalog: &ClassCatalog) -> PqReport {
        let classes: Vec<ClassPq> = catalog
            .entries()
            .iter()
            .zip(&self.per_class)
            .map(|(e, c)| ClassPq {
                class: e.id,
                name: e.name.clone(),
                is_thing: e.is_thing,
                counts: *c,
            })
            .collect();
        let agg = |f: &dyn Fn(&ClassPq) -> bool| Aggregate::over(classes.iter().filter(|c| f(c)).map(|c| &c.counts));
        PqReport {
            all: agg(&|_| true),
            things: agg(&|c| c.is_thing),
            stuff: agg(&|c| !c.is_thing),
            classes,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassPq {
    pub class: u16,
    pub name: String,
    pub is_thing: bool,
    pub counts: PqCounts,
}

/// Means over the classes with at least one segment.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Aggregate {
    pub pq: f64,
    pub sq: f64,
    pub rq: f64,
    pub classes: usize,
}

impl Aggregate {
    fn over<'a>(counts: impl Iterator<Item = &'a PqCounts>) -> Self {
        let mut a = Aggregate::default();
        for c in counts.filter(|c| !c.is_empty()) {
            a.pq += c.pq();
            a.sq += c.sq();
            a.rq += c.rq();
            a.classes += 1;
        }
        if a.classes > 0 {
            let n = a.classes as f64;
            a.pq /= n;
            a.sq /= n;
            a.rq /= n;
        }
        a
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PqReport {
    pub classes: Vec<ClassPq>,
    pub all: Aggregate,
    pub things: Aggregate,
    pub stuff: Aggregate,
}

/// Panoptic quality of a single image pair.
pub fn panoptic_quality(pred: &PanopticMap, gt: &PanopticMap, catalog: &ClassCatalog) -> Result<PqReport> {
    let mut acc = PqAccumulator::new(catalog.len());
    acc.add(pred, gt, catalog)?;
    Ok(acc.report(catalog))
}

/// Dataset-level evaluation: semantic metrics plus panoptic quality.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluator {
    catalog: ClassCatalog,
    confusion: ConfusionMatrix,
    pq: PqAccumulator,
}

impl Evaluator {
    pub fn new(catalog: &ClassCatalog) -> Self {
        Self {
            catalog: catalog.clone(),
            confusion: ConfusionMatrix::new(catalog.len()),
            pq: PqAccumulator::new(catalog.len()),
        }
    }

    pub fn add(&mut self, pred: &PanopticMap, gt: &PanopticMap) -> Result<()> {
        self.pq.add(pred, gt, &self.catalog)?;
        self.confusion.accumulate(&pred.semantic(), &gt.semantic())
    }

    pub fn merge(&mut self, other: &Evaluator) -> Result<()> {
        if other.catalog != self.catalog {
            return Err(Error::InvalidConfig("evaluators use different catalogs".into()));
        }
        self.confusion.merge(&other.confusion)?;
        self.pq.merge(&other.pq)
    }

    pub fn confusion(&self) -> &ConfusionMatrix {
        &self.confusion
    }

    pub fn summary(&self, universe: MiouUniverse) -> Summary {
        Summary {
            accuracy: self.confusion.accuracy(),
            miou: self.confusion.miou(universe),
            pq: self.pq.report(&self.catalog),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub accuracy: f64,
    pub miou: f64,
    pub pq: PqReport,
}

impl Summary {
    fn rows(&self) -> Vec<(String, f64, f64, f64, Option<PqCounts>)> {
        let mut rows: Vec<_> = self
            .pq
            .classes
            .iter()
            .filter(|c| !c.counts.is_empty())
            .map(|c| (c.name.clone(), c.counts.pq(), c.counts.sq(), c.counts.rq(), Some(c.counts)))
            .collect();
        for (name, a) in [("All", self.pq.all), ("Things", self.pq.things), ("Stuff", self.pq.stuff)] {
            rows.push((name.to_string(), a.pq, a.sq, a.rq, None));
        }
        rows
    }

    /// Columns `class,PQ,SQ,RQ,TP,FP,FN`; aggregate rows leave the counts empty.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("class,PQ,SQ,RQ,TP,FP,FN\n");
        for (name, pq, sq, rq, counts) in self.rows() {
            let _ = write!(out, "{name},{pq:.6},{sq:.6},{rq:.6}");
            match counts {
                Some(c) => {
                    let _ = writeln!(out, ",{},{},{}", c.tp, c.fp, c.fn_);
                }
                None => out.push_str(",,,\n"),
            }
        }
        out
    }

    /// Fixed-width table followed by the semantic metrics.
    pub fn to_table(&self) -> String {
        let rows = self.rows();
        let width = rows.iter().map(|r| r.0.len()).max().unwrap_or(5).max(5);
        let mut out = format!(
            "{:<width$}  {:>7} {:>7} {:>7} {:>6} {:>6} {:>6}\n",
            "class", "PQ", "SQ", "RQ", "TP", "FP", "FN"
        );
        for (name, pq, sq, rq, counts) in rows {
            let _ = write!(out, "{name:<width$}  {:>7.2} {:>7.2} {:>7.2}", pq * 100.0, sq * 100.0, rq * 100.0);
            match counts {
                Some(c) => {
                    let _ = writeln!(out, " {:>6} {:>6} {:>6}", c.tp, c.fp, c.fn_);
                }
                None => out.push('\n'),
            }
        }
        let _ = writeln!(out, "Acc  {:.2}", self.accuracy * 100.0);
        let _ = writeln!(out, "mIoU {:.2}", self.miou * 100.0);
        out
    }

    /// `key,value` lines for the headline numbers.
    pub fn to_summary_csv(&self) -> String {
        format!(
            "metric,value\nAcc,{:.6}\nmIoU,{:.6}\nPQ,{:.6}\nSQ,{:.6}\nRQ,{:.6}\nPQ_things,{:.6}\nPQ_stuff,{:.6}\n",
            self.accuracy, self.miou, self.pq.all.pq, self.pq.all.sq, self.pq.all.rq, self.pq.things.pq, self.pq.stuff.pq
        )
    }
}
