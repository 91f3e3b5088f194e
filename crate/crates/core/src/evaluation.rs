//! Evaluation protocols: per-style Dice records, corpus statistics,
//! image-adaptive and annotator-specific style selection, AS² alignment
//! tables, group style assignment, and shape-based consistency analysis.

use std::collections::BTreeMap;

use crate::data::{AnnotatedSample, BinaryMask};
use crate::error::{Error, Result};
use crate::exec;
use crate::losses::SoftMaskStack;
use crate::metrics::{
    self, normalized_style_shapes, ShapeFeatures, StyleAssignmentDistribution, StyleShapeTable,
};
use crate::models::SegModel;
use crate::util::{fmt_f64, median, split_csv_line, MeanStd};

/// Per-(image, ground-truth mask) evaluation record. `k` and `m_best` are
/// 1-based; `m_best` ties break to the lowest index, mirroring training.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub image_id: String,
    pub k: usize,
    pub dice_per_style: Vec<f64>,
    pub m_best: usize,
    pub preference_label: Option<String>,
    pub planted_style: Option<usize>,
}

impl EvalRecord {
    pub fn style_count(&self) -> usize {
        self.dice_per_style.len()
    }

    fn best_index(dice: &[f64]) -> usize {
        let mut best = 0;
        for (j, &d) in dice.iter().enumerate() {
            if d > dice[best] {
                best = j;
            }
        }
        best + 1
    }
}

/// Scores one prediction stack against a sample's ground-truth masks:
/// channels thresholded, hard Dice per style.
pub fn records_for_stack(
    sample: &AnnotatedSample,
    stack: &SoftMaskStack,
    threshold: f64,
) -> Result<Vec<EvalRecord>> {
    let (h, w) = (sample.image.height(), sample.image.width());
    if stack.height() != h || stack.width() != w {
        return Err(Error::DimMismatch(format!(
            "stack {}x{} vs image {}x{}",
            stack.height(),
            stack.width(),
            h,
            w
        )));
    }
    let hard: Vec<BinaryMask> = (0..stack.style_count())
        .map(|j| BinaryMask::from_plane(stack.channel(j), h, w, threshold as f32))
        .collect::<Result<_>>()?;
    let mut records = Vec::with_capacity(sample.mask_count());
    for (k, gt) in sample.masks.iter().enumerate() {
        let dice_per_style: Vec<f64> = hard
            .iter()
            .map(|pred| metrics::dice(pred, gt))
            .collect::<Result<_>>()?;
        let m_best = EvalRecord::best_index(&dice_per_style);
        records.push(EvalRecord {
            image_id: sample.image.id.clone(),
            k: k + 1,
            dice_per_style,
            m_best,
            preference_label: gt.source_label.clone(),
            planted_style: gt.planted_style,
        });
    }
    Ok(records)
}

/// Runs the model over every sample and scores all (image, mask) pairs.
pub fn evaluate_corpus(
    model: &SegModel,
    samples: &[&AnnotatedSample],
    threshold: f64,
) -> Result<Vec<EvalRecord>> {
    let per_sample = exec::map_slice(samples, |sample| -> Result<Vec<EvalRecord>> {
        let stack = model.forward(sample.image.pixels())?;
        records_for_stack(sample, &stack, threshold)
    });
    let mut records = Vec::new();
    for r in per_sample {
        records.extend(r?);
    }
    Ok(records)
}

/// Corpus-level mean±std of each per-record statistic over the style-Dice
/// vector (the per-style reporting protocol).
#[derive(Debug, Clone, PartialEq)]
pub struct StyleStatistics {
    pub max: MeanStd,
    pub mean: MeanStd,
    pub median: MeanStd,
    pub min: MeanStd,
}

pub fn style_statistics(records: &[EvalRecord]) -> Result<StyleStatistics> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no evaluation records".into()));
    }
    let mut maxs = Vec::with_capacity(records.len());
    let mut means = Vec::with_capacity(records.len());
    let mut medians = Vec::with_capacity(records.len());
    let mut mins = Vec::with_capacity(records.len());
    for r in records {
        let d = &r.dice_per_style;
        maxs.push(d.iter().cloned().fold(f64::NEG_INFINITY, f64::max));
        mins.push(d.iter().cloned().fold(f64::INFINITY, f64::min));
        means.push(d.iter().sum::<f64>() / d.len() as f64);
        medians.push(median(d));
    }
    Ok(StyleStatistics {
        max: MeanStd::of(&maxs),
        mean: MeanStd::of(&means),
        median: MeanStd::of(&medians),
        min: MeanStd::of(&mins),
    })
}

/// Image-adaptive style selection: per record take the best style's Dice.
pub fn dice_iass(records: &[EvalRecord]) -> Result<MeanStd> {
    if records.is_empty() {
        return Err(Error::InvalidInput("no evaluation records".into()));
    }
    let maxs: Vec<f64> = records
        .iter()
        .map(|r| r.dice_per_style.iter().cloned().fold(f64::NEG_INFINITY, f64::max))
        .collect();
    Ok(MeanStd::of(&maxs))
}

/// Annotator-specific style selection over one preference group: the single
/// style J (1-based, lowest index on ties) maximizing the summed Dice, and
/// the group's mean±std at that style.
pub fn dice_asss(records: &[EvalRecord]) -> Result<(usize, MeanStd)> {
    if records.is_empty() {
        return Err(Error::InvalidInput("empty preference group".into()));
    }
    let m = records[0].style_count();
    let mut sums = vec![0.0f64; m];
    for r in records {
        for (j, &d) in r.dice_per_style.iter().enumerate() {
            sums[j] += d;
        }
    }
    let mut best = 0;
    for (j, &s) in sums.iter().enumerate() {
        if s > sums[best] {
            best = j;
        }
    }
    let column: Vec<f64> = records.iter().map(|r| r.dice_per_style[best]).collect();
    Ok((best + 1, MeanStd::of(&column)))
}

/// One row of the per-preference report (the personalization table).
#[derive(Debug, Clone)]
pub struct PreferenceReport {
    pub preference_label: String,
    pub count: usize,
    pub dice_iass: MeanStd,
    pub dice_asss: MeanStd,
    /// The group's fixed style J, 1-based.
    pub chosen_style: usize,
}

/// Groups records by preference label (unlabelled records are skipped) and
/// computes the IASS and ASSS summaries per group.
pub fn preference_reports(records: &[EvalRecord]) -> Result<Vec<PreferenceReport>> {
    let mut groups: BTreeMap<&str, Vec<&EvalRecord>> = BTreeMap::new();
    for r in records {
        if let Some(label) = &r.preference_label {
            groups.entry(label).or_default().push(r);
        }
    }
    let mut reports = Vec::with_capacity(groups.len());
    for (label, group) in groups {
        let owned: Vec<EvalRecord> = group.iter().map(|&r| r.clone()).collect();
        let iass = dice_iass(&owned)?;
        let (chosen_style, asss) = dice_asss(&owned)?;
        reports.push(PreferenceReport {
            preference_label: label.to_string(),
            count: owned.len(),
            dice_iass: iass,
            dice_asss: asss,
            chosen_style,
        });
    }
    Ok(reports)
}

/// Fractions of a record group assigned (via m_best) to each style, plus the
/// alignment strength of that assignment.
pub fn style_assignment(records: &[EvalRecord]) -> Result<(StyleAssignmentDistribution, f64)> {
    if records.is_empty() {
        return Err(Error::InvalidInput("empty record group".into()));
    }
    let m = records[0].style_count();
    if m < 2 {
        return Err(Error::InvalidInput(
            "style assignment needs at least 2 styles".into(),
        ));
    }
    let mut counts = vec![0usize; m];
    for r in records {
        counts[r.m_best - 1] += 1;
    }
    let q = StyleAssignmentDistribution::from_counts(&counts)?;
    let value = metrics::as2(&q);
    Ok((q, value))
}

/// Metadata key used to partition records into groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GroupKey {
    /// Full preference label, e.g. "A00+T2+E".
    Preference,
    /// Tool component of the preference label (second `+` field).
    Tool,
    /// Annotator component of the preference label (first `+` field).
    Annotator,
    /// Known generating style of synthetic masks.
    PlantedStyle,
}

impl GroupKey {
    pub fn as_str(self) -> &'static str {
        match self {
            GroupKey::Preference => "preference",
            GroupKey::Tool => "tool",
            GroupKey::Annotator => "annotator",
            GroupKey::PlantedStyle => "planted_style",
        }
    }

    pub fn parse(s: &str) -> Option<GroupKey> {
        match s {
            "preference" => Some(GroupKey::Preference),
            "tool" => Some(GroupKey::Tool),
            "annotator" => Some(GroupKey::Annotator),
            "planted_style" => Some(GroupKey::PlantedStyle),
            _ => None,
        }
    }

    fn extract(&self, record: &EvalRecord) -> Option<String> {
        match self {
            GroupKey::Preference => record.preference_label.clone(),
            GroupKey::Tool => record
                .preference_label
                .as_ref()
                .and_then(|l| l.split('+').nth(1))
                .map(str::to_string),
            GroupKey::Annotator => record
                .preference_label
                .as_ref()
                .and_then(|l| l.split('+').next())
                .map(str::to_string),
            GroupKey::PlantedStyle => record.planted_style.map(|s| s.to_string()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct GroupAssignment {
    pub group: String,
    pub q: StyleAssignmentDistribution,
    pub as2: f64,
    /// Most frequent style in the group, 1-based.
    pub modal_style: usize,
}

#[derive(Debug, Clone)]
pub struct GroupAssignmentTable {
    pub rows: Vec<GroupAssignment>,
    /// Whether the modal styles are pairwise distinct across groups.
    pub modal_styles_distinct: bool,
}

/// Partitions records by a metadata key and computes the per-group style
/// assignment. Errors when any record lacks the requested metadata.
pub fn group_style_assignment(
    records: &[EvalRecord],
    key: GroupKey,
) -> Result<GroupAssignmentTable> {
    let mut groups: BTreeMap<String, Vec<EvalRecord>> = BTreeMap::new();
    for r in records {
        let group = key.extract(r).ok_or_else(|| {
            Error::InvalidInput(format!(
                "record {}#{} has no {} metadata",
                r.image_id,
                r.k,
                key.as_str()
            ))
        })?;
        groups.entry(group).or_default().push(r.clone());
    }
    let mut rows = Vec::with_capacity(groups.len());
    for (group, members) in groups {
        let (q, as2) = style_assignment(&members)?;
        let modal_style = q.modal_style();
        rows.push(GroupAssignment {
            group,
            q,
            as2,
            modal_style,
        });
    }
    let mut modal: Vec<usize> = rows.iter().map(|r| r.modal_style).collect();
    modal.sort_unstable();
    modal.dedup();
    let modal_styles_distinct = modal.len() == rows.len();
    Ok(GroupAssignmentTable {
        rows,
        modal_styles_distinct,
    })
}

/// Per-style centroid of the normalized shape ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct StyleCentroid {
    pub style: usize,
    pub count: usize,
    pub area_ratio: f64,
    pub perimeter_ratio: f64,
}

#[derive(Debug, Clone)]
pub struct ConsistencyReport {
    pub table: StyleShapeTable,
    pub centroids: Vec<StyleCentroid>,
}

/// Shape features per thresholded style channel, normalized per image
/// against style 1. Channels empty after thresholding become missing cells.
pub fn consistency_from_stacks(
    ids: &[String],
    stacks: &[SoftMaskStack],
    threshold: f64,
) -> Result<ConsistencyReport> {
    let mut per_image: Vec<(String, Vec<Option<ShapeFeatures>>)> = Vec::new();
    for (id, stack) in ids.iter().zip(stacks) {
        let mut features = Vec::with_capacity(stack.style_count());
        for j in 0..stack.style_count() {
            let hard = BinaryMask::from_plane(
                stack.channel(j),
                stack.height(),
                stack.width(),
                threshold as f32,
            )?;
            features.push(if hard.is_empty() {
                None
            } else {
                Some(metrics::shape_features(&hard)?)
            });
        }
        per_image.push((id.clone(), features));
    }
    let table = normalized_style_shapes(&per_image);

    let m = stacks.first().map(|s| s.style_count()).unwrap_or(0);
    let mut centroids = Vec::with_capacity(m);
    for style in 1..=m {
        let rows: Vec<_> = table.rows.iter().filter(|r| r.style == style).collect();
        let count = rows.len();
        let (mut area, mut perim) = (0.0, 0.0);
        for r in &rows {
            area += r.area_ratio;
            perim += r.perimeter_ratio;
        }
        centroids.push(StyleCentroid {
            style,
            count,
            area_ratio: if count > 0 { area / count as f64 } else { f64::NAN },
            perimeter_ratio: if count > 0 { perim / count as f64 } else { f64::NAN },
        });
    }
    Ok(ConsistencyReport { table, centroids })
}

pub fn consistency_analysis(
    model: &SegModel,
    samples: &[&AnnotatedSample],
    threshold: f64,
) -> Result<ConsistencyReport> {
    let stacks = exec::map_slice(samples, |s| model.forward(s.image.pixels()))
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let ids: Vec<String> = samples.iter().map(|s| s.image.id.clone()).collect();
    consistency_from_stacks(&ids, &stacks, threshold)
}

// --- CSV emission and ingestion -------------------------------------------

/// records.csv: image_id,k,preference_label,d_1..d_M,m_best
pub fn records_csv(records: &[EvalRecord], m: usize) -> String {
    let mut header = String::from("image_id,k,preference_label");
    for j in 1..=m {
        header.push_str(&format!(",d_{j}"));
    }
    header.push_str(",m_best\n");
    let mut out = header;
    for r in records {
        out.push_str(&format!(
            "{},{},{}",
            r.image_id,
            r.k,
            r.preference_label.as_deref().unwrap_or("")
        ));
        for &d in &r.dice_per_style {
            out.push(',');
            out.push_str(&fmt_f64(d));
        }
        out.push_str(&format!(",{}\n", r.m_best));
    }
    out
}

/// Parses records.csv back into records (for model-free AS² recomputation).
pub fn parse_records_csv(text: &str) -> Result<Vec<EvalRecord>> {
    let mut lines = text.lines();
    let header = lines
        .next()
        .ok_or_else(|| Error::format("records.csv", "empty file"))?;
    let fields = split_csv_line(header);
    if fields.len() < 5
        || fields[0] != "image_id"
        || fields[1] != "k"
        || fields[2] != "preference_label"
        || *fields.last().unwrap() != "m_best"
    {
        return Err(Error::format("records.csv", "unexpected header"));
    }
    let m = fields.len() - 4;
    for (j, f) in fields[3..3 + m].iter().enumerate() {
        if *f != format!("d_{}", j + 1) {
            return Err(Error::format(
                "records.csv",
                format!("expected column d_{}, found {f}", j + 1),
            ));
        }
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let cols = split_csv_line(line);
        if cols.len() != m + 4 {
            return Err(Error::format(
                "records.csv",
                format!("line {}: expected {} fields, got {}", i + 2, m + 4, cols.len()),
            ));
        }
        let bad = |what: &str| Error::format("records.csv", format!("line {}: bad {what}", i + 2));
        let dice_per_style: Vec<f64> = cols[3..3 + m]
            .iter()
            .map(|c| c.parse::<f64>().map_err(|_| bad("dice value")))
            .collect::<Result<_>>()?;
        records.push(EvalRecord {
            image_id: cols[0].to_string(),
            k: cols[1].parse().map_err(|_| bad("k"))?,
            preference_label: if cols[2].is_empty() {
                None
            } else {
                Some(cols[2].to_string())
            },
            m_best: cols[3 + m].parse().map_err(|_| bad("m_best"))?,
            dice_per_style,
            planted_style: None,
        });
    }
    Ok(records)
}

/// preferences.csv (the per-preference personalization table).
pub fn preferences_csv(reports: &[PreferenceReport]) -> String {
    let mut out = String::from(
        "preference_label,count,dice_iass_mean,dice_iass_std,dice_asss_mean,dice_asss_std,chosen_style\n",
    );
    for r in reports {
        out.push_str(&format!(
            "{},{},{},{},{},{},{}\n",
            r.preference_label,
            r.count,
            fmt_f64(r.dice_iass.mean),
            fmt_f64(r.dice_iass.std),
            fmt_f64(r.dice_asss.mean),
            fmt_f64(r.dice_asss.std),
            r.chosen_style
        ));
    }
    out
}

/// assignment.csv: group,q_1..q_M,as2,modal_style
pub fn assignment_csv(table: &GroupAssignmentTable, m: usize) -> String {
    let mut header = String::from("group");
    for j in 1..=m {
        header.push_str(&format!(",q_{j}"));
    }
    header.push_str(",as2,modal_style\n");
    let mut out = header;
    for row in &table.rows {
        out.push_str(&row.group);
        for &q in row.q.fractions() {
            out.push(',');
            out.push_str(&fmt_f64(q));
        }
        out.push_str(&format!(",{},{}\n", fmt_f64(row.as2), row.modal_style));
    }
    out
}

/// shapes.csv: image_id,style,area_ratio,perimeter_ratio
pub fn shapes_csv(table: &StyleShapeTable) -> String {
    let mut out = String::from("image_id,style,area_ratio,perimeter_ratio\n");
    for r in &table.rows {
        out.push_str(&format!(
            "{},{},{},{}\n",
            r.image_id,
            r.style,
            fmt_f64(r.area_ratio),
            fmt_f64(r.perimeter_ratio)
        ));
    }
    out
}
