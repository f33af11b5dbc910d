//! Segmentation metrics, report aggregation, and the branch-ablation harness.
//!
//! Scores follow the two-class convention: IoU and Dice are computed for the
//! foreground and the background separately, the per-sample mean is their
//! average, and dataset-level `mIoU` / `mDice` / `IoU_FG` are arithmetic
//! means over per-sample values. Pairs where both masks are empty for the
//! scored class count as perfect agreement (1.0) so nodule-free images do
//! not produce 0/0.

use serde::{Deserialize, Serialize};

use crate::data::{ImageSample, Mask};
use crate::error::{Error, Result};

/// Which class a binary overlap score is computed for.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MaskClass {
    Foreground,
    Background,
}

/// A branch of the dual-branch model, as named by the ablation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Cgb,
    Fgb,
}

impl std::str::FromStr for Branch {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "cgb" => Ok(Branch::Cgb),
            "fgb" => Ok(Branch::Fgb),
            other => Err(Error::config(format!(
                "unknown branch {other:?}; expected cgb or fgb"
            ))),
        }
    }
}

fn counts(pred: &Mask, gt: &Mask, class: MaskClass) -> Result<(u64, u64, u64)> {
    if pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(Error::shape(format!(
            "mask shapes differ: {}x{} vs {}x{}",
            pred.height(),
            pred.width(),
            gt.height(),
            gt.width()
        )));
    }
    let positive = match class {
        MaskClass::Foreground => 1u8,
        MaskClass::Background => 0u8,
    };
    let mut inter = 0u64;
    let mut n_pred = 0u64;
    let mut n_gt = 0u64;
    for (p, g) in pred.data().iter().zip(gt.data()) {
        let p = (*p == positive) as u64;
        let g = (*g == positive) as u64;
        inter += p & g;
        n_pred += p;
        n_gt += g;
    }
    Ok((inter, n_pred, n_gt))
}

/// Intersection over union for the chosen class; 1.0 when both masks are
/// empty for that class.
pub fn iou(pred: &Mask, gt: &Mask, class: MaskClass) -> Result<f64> {
    let (inter, n_pred, n_gt) = counts(pred, gt, class)?;
    let union = n_pred + n_gt - inter;
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// Dice coefficient for the chosen class; 1.0 when both masks are empty for
/// that class.
pub fn dice(pred: &Mask, gt: &Mask, class: MaskClass) -> Result<f64> {
    let (inter, n_pred, n_gt) = counts(pred, gt, class)?;
    if n_pred + n_gt == 0 {
        Ok(1.0)
    } else {
        Ok(2.0 * inter as f64 / (n_pred + n_gt) as f64)
    }
}

/// All overlap scores for one evaluated sample.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SampleScore {
    pub sample_id: String,
    pub iou_fg: f64,
    pub iou_bg: f64,
    pub iou_mean: f64,
    pub dice_fg: f64,
    pub dice_bg: f64,
    pub dice_mean: f64,
}

impl SampleScore {
    pub fn compute(sample_id: &str, pred: &Mask, gt: &Mask) -> Result<Self> {
        let iou_fg = iou(pred, gt, MaskClass::Foreground)?;
        let iou_bg = iou(pred, gt, MaskClass::Background)?;
        let dice_fg = dice(pred, gt, MaskClass::Foreground)?;
        let dice_bg = dice(pred, gt, MaskClass::Background)?;
        Ok(Self {
            sample_id: sample_id.to_string(),
            iou_fg,
            iou_bg,
            iou_mean: 0.5 * (iou_fg + iou_bg),
            dice_fg,
            dice_bg,
            dice_mean: 0.5 * (dice_fg + dice_bg),
        })
    }
}

/// Run provenance attached to every report.
#[derive(Debug, Clone, Default, Serialize, Deserialize, PartialEq)]
pub struct RunMetadata {
    pub config_hash: String,
    pub checkpoint: String,
    pub dataset: String,
    /// Scores are computed at this evaluation crop resolution, not resized
    /// back to native image sizes.
    pub resolution: usize,
    pub threshold: f64,
}

/// Aggregated evaluation result.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct MetricReport {
    pub per_sample: Vec<SampleScore>,
    pub m_iou: f64,
    pub m_dice: f64,
    pub iou_fg: f64,
    pub n_samples: usize,
    pub run_metadata: RunMetadata,
}

impl MetricReport {
    pub fn aggregate(per_sample: Vec<SampleScore>, run_metadata: RunMetadata) -> Result<Self> {
        if per_sample.is_empty() {
            return Err(Error::data("cannot aggregate an empty score list"));
        }
        let n = per_sample.len() as f64;
        let m_iou = per_sample.iter().map(|s| s.iou_mean).sum::<f64>() / n;
        let m_dice = per_sample.iter().map(|s| s.dice_mean).sum::<f64>() / n;
        let iou_fg = per_sample.iter().map(|s| s.iou_fg).sum::<f64>() / n;
        Ok(Self {
            n_samples: per_sample.len(),
            per_sample,
            m_iou,
            m_dice,
            iou_fg,
            run_metadata,
        })
    }

    /// Headline values as percentages with two decimals, e.g.
    /// `mIoU 86.85 mDice 91.91 IoU_FG 76.52`.
    pub fn headline(&self) -> String {
        format!(
            "mIoU {:.2} mDice {:.2} IoU_FG {:.2}",
            self.m_iou * 100.0,
            self.m_dice * 100.0,
            self.iou_fg * 100.0
        )
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Anything that can turn samples into predicted binary masks.
pub trait MaskPredictor {
    fn predict_masks(&self, samples: &[ImageSample], threshold: f64) -> Result<Vec<Mask>>;
}

/// A predictor whose branches can be replaced by zero tensors at predict
/// time, leaving the original untouched.
pub trait AblatablePredictor: MaskPredictor + Sized {
    fn ablate_branch(&self, branch: Branch) -> Result<Self>;
}

/// Evaluate a predictor over a dataset; scores are computed per sample and
/// averaged in sample order.
pub fn evaluate<P: MaskPredictor>(
    predictor: &P,
    samples: &[ImageSample],
    threshold: f64,
    run_metadata: RunMetadata,
) -> Result<MetricReport> {
    if samples.is_empty() {
        return Err(Error::data("evaluation dataset is empty"));
    }
    let preds = predictor.predict_masks(samples, threshold)?;
    if preds.len() != samples.len() {
        return Err(Error::shape(format!(
            "predictor returned {} masks for {} samples",
            preds.len(),
            samples.len()
        )));
    }
    let mut scores = Vec::with_capacity(samples.len());
    for (sample, pred) in samples.iter().zip(&preds) {
        scores.push(SampleScore::compute(&sample.sample_id, pred, &sample.mask)?);
    }
    MetricReport::aggregate(scores, run_metadata)
}

/// One row of the ablation table.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AblationRow {
    pub cgb: bool,
    pub fgb: bool,
    pub ph: bool,
    pub m_iou: f64,
    pub m_dice: f64,
    pub iou_fg: f64,
}

/// Three-row ablation study: each branch zeroed in turn, then the full model.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
    pub run_metadata: RunMetadata,
}

impl AblationTable {
    pub fn render(&self) -> String {
        let mut out = String::from("CGB FGB PH  mIoU(%) mDice(%) IoU_FG(%)\n");
        for r in &self.rows {
            let tick = |b: bool| if b { "x" } else { " " };
            out.push_str(&format!(
                "{:^3} {:^3} {:^2}  {:>7.2} {:>8.2} {:>9.2}\n",
                tick(r.cgb),
                tick(r.fgb),
                tick(r.ph),
                r.m_iou * 100.0,
                r.m_dice * 100.0,
                r.iou_fg * 100.0
            ));
        }
        out
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Run the zero-tensor ablation study: CGB only, FGB only, then the full
/// model, mirroring the published table layout.
pub fn ablation_table<M: AblatablePredictor>(
    model: &M,
    samples: &[ImageSample],
    threshold: f64,
    run_metadata: RunMetadata,
) -> Result<AblationTable> {
    let cgb_only = model.ablate_branch(Branch::Fgb)?;
    let fgb_only = model.ablate_branch(Branch::Cgb)?;
    let mut rows = Vec::with_capacity(3);
    for (variant, cgb, fgb) in [
        (&cgb_only, true, false),
        (&fgb_only, false, true),
        (model, true, true),
    ] {
        let report = evaluate(variant, samples, threshold, run_metadata.clone())?;
        rows.push(AblationRow {
            cgb,
            fgb,
            ph: true,
            m_iou: report.m_iou,
            m_dice: report.m_dice,
            iou_fg: report.iou_fg,
        });
    }
    Ok(AblationTable {
        rows,
        run_metadata,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mask(h: usize, w: usize, fg: &[(usize, usize)]) -> Mask {
        let mut data = vec![0u8; h * w];
        for &(y, x) in fg {
            data[y * w + x] = 1;
        }
        Mask::new(h, w, data).unwrap()
    }

    #[test]
    fn iou_and_dice_trivial_cases() {
        let a = mask(2, 2, &[(0, 0), (0, 1)]);
        assert_eq!(iou(&a, &a, MaskClass::Foreground).unwrap(), 1.0);
        assert_eq!(dice(&a, &a, MaskClass::Foreground).unwrap(), 1.0);

        let b = mask(2, 2, &[(1, 0), (1, 1)]);
        assert_eq!(iou(&a, &b, MaskClass::Foreground).unwrap(), 0.0);
        assert_eq!(dice(&a, &b, MaskClass::Foreground).unwrap(), 0.0);

        // Both empty: perfect agreement by convention.
        let e = mask(2, 2, &[]);
        assert_eq!(iou(&e, &e, MaskClass::Foreground).unwrap(), 1.0);
        assert_eq!(dice(&e, &e, MaskClass::Foreground).unwrap(), 1.0);
    }

    #[test]
    fn two_by_two_worked_example() {
        // pred fg = {(0,0),(0,1)}, gt fg = {(0,1),(1,1)}: intersection 1, union 3.
        let pred = mask(2, 2, &[(0, 0), (0, 1)]);
        let gt = mask(2, 2, &[(0, 1), (1, 1)]);
        let i = iou(&pred, &gt, MaskClass::Foreground).unwrap();
        let d = dice(&pred, &gt, MaskClass::Foreground).unwrap();
        assert!((i - 1.0 / 3.0).abs() < 1e-15);
        assert!((d - 0.5).abs() < 1e-15);
        // dice = 2*iou/(1+iou)
        assert!((d - 2.0 * i / (1.0 + i)).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_is_an_error() {
        let a = mask(2, 2, &[]);
        let b = mask(2, 3, &[]);
        assert!(matches!(
            iou(&a, &b, MaskClass::Foreground),
            Err(Error::Shape(_))
        ));
    }

    /// Exhaustive pixel-count oracle, written independently of `counts`.
    fn oracle(pred: &Mask, gt: &Mask, positive: u8) -> (f64, f64) {
        let mut inter = 0.0;
        let mut np = 0.0;
        let mut ng = 0.0;
        for y in 0..pred.height() {
            for x in 0..pred.width() {
                let p = pred.get(y, x) == positive;
                let g = gt.get(y, x) == positive;
                if p && g {
                    inter += 1.0;
                }
                if p {
                    np += 1.0;
                }
                if g {
                    ng += 1.0;
                }
            }
        }
        let union = np + ng - inter;
        let iou = if union == 0.0 { 1.0 } else { inter / union };
        let dice = if np + ng == 0.0 {
            1.0
        } else {
            2.0 * inter / (np + ng)
        };
        (iou, dice)
    }

    #[test]
    fn matches_pixel_count_oracle_on_random_pairs() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(99);
        for _ in 0..100 {
            let data_a: Vec<u8> = (0..64).map(|_| rng.gen_range(0..=1u8)).collect();
            let data_b: Vec<u8> = (0..64).map(|_| rng.gen_range(0..=1u8)).collect();
            let a = Mask::new(8, 8, data_a).unwrap();
            let b = Mask::new(8, 8, data_b).unwrap();
            for class in [MaskClass::Foreground, MaskClass::Background] {
                let pos = if class == MaskClass::Foreground { 1 } else { 0 };
                let (oi, od) = oracle(&a, &b, pos);
                assert_eq!(iou(&a, &b, class).unwrap(), oi);
                assert_eq!(dice(&a, &b, class).unwrap(), od);
                // Dice-IoU identity.
                let i = iou(&a, &b, class).unwrap();
                let d = dice(&a, &b, class).unwrap();
                assert!((d - 2.0 * i / (1.0 + i)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn report_round_trips_through_json() {
        let s1 = SampleScore::compute("a", &mask(2, 2, &[(0, 0)]), &mask(2, 2, &[(0, 0)])).unwrap();
        let s2 = SampleScore::compute("b", &mask(2, 2, &[(0, 1)]), &mask(2, 2, &[(1, 1)])).unwrap();
        let report = MetricReport::aggregate(
            vec![s1, s2],
            RunMetadata {
                config_hash: "deadbeef".into(),
                checkpoint: "ckpt".into(),
                dataset: "toy".into(),
                resolution: 2,
                threshold: 0.5,
            },
        )
        .unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("report.json");
        report.save(&path).unwrap();
        let loaded = MetricReport::load(&path).unwrap();
        assert_eq!(report, loaded);
    }

    #[test]
    fn aggregates_are_means() {
        let s1 = SampleScore::compute("a", &mask(2, 2, &[(0, 0)]), &mask(2, 2, &[(0, 0)])).unwrap();
        let s2 = SampleScore::compute("b", &mask(2, 2, &[(0, 0)]), &mask(2, 2, &[(1, 1)])).unwrap();
        let report = MetricReport::aggregate(vec![s1.clone(), s2.clone()], RunMetadata::default()).unwrap();
        assert!((report.m_iou - 0.5 * (s1.iou_mean + s2.iou_mean)).abs() < 1e-15);
        assert!((report.m_dice - 0.5 * (s1.dice_mean + s2.dice_mean)).abs() < 1e-15);
        assert!((report.iou_fg - 0.5 * (s1.iou_fg + s2.iou_fg)).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn iou_dice_symmetric_and_bounded(a in proptest::collection::vec(0u8..=1, 36),
                                          b in proptest::collection::vec(0u8..=1, 36)) {
            let ma = Mask::new(6, 6, a).unwrap();
            let mb = Mask::new(6, 6, b).unwrap();
            for class in [MaskClass::Foreground, MaskClass::Background] {
                let i_ab = iou(&ma, &mb, class).unwrap();
                let i_ba = iou(&mb, &ma, class).unwrap();
                let d_ab = dice(&ma, &mb, class).unwrap();
                let d_ba = dice(&mb, &ma, class).unwrap();
                prop_assert_eq!(i_ab, i_ba);
                prop_assert_eq!(d_ab, d_ba);
                prop_assert!((0.0..=1.0).contains(&i_ab));
                prop_assert!((0.0..=1.0).contains(&d_ab));
                prop_assert!((d_ab - 2.0 * i_ab / (1.0 + i_ab)).abs() < 1e-12);
            }
        }
    }
}
