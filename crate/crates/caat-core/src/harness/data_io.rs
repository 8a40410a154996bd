//! Dataset files and report tables. Every CSV this crate emits opens with
//! a `# <schema> v<version>` comment so readers can refuse files they do
//! not understand, and floats are written in shortest round-trip form so a
//! load returns bit-identical values.

use std::fs;
use std::path::Path;

use crate::data::ClassDataset;
use crate::error::CoreError;
use crate::montecarlo::Case3Report;
use crate::trainer::TrainLog;
use crate::Result;

pub const DATASET_SCHEMA: &str = "# dataset v1";
pub const TRAIN_METRICS_SCHEMA: &str = "# train-metrics v1";
pub const ADV_RATIO_SCHEMA: &str = "# adv-ratio v1";
pub const SIMULATE_SCHEMA: &str = "# simulate v1";

const IDX_IMAGES_MAGIC: u32 = 0x0000_0803;
const IDX_LABELS_MAGIC: u32 = 0x0000_0801;

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) if x.is_finite() => x.to_string(),
        _ => String::new(),
    }
}

/// Renders a dataset as CSV: schema comment, an optional clip comment,
/// a header, then one row per sample.
pub fn dataset_to_csv(data: &ClassDataset) -> Result<String> {
    data.validate()?;
    let mut out = String::from(DATASET_SCHEMA);
    out.push('\n');
    if let Some((lo, hi)) = data.domain_clip {
        out.push_str(&format!("# clip {lo} {hi}\n"));
    }
    out.push_str("label,noisy");
    for j in 0..data.d {
        out.push_str(&format!(",f{j}"));
    }
    out.push('\n');
    for i in 0..data.n() {
        out.push_str(&format!(
            "{},{}",
            data.labels[i],
            u8::from(data.noisy[i])
        ));
        for v in data.row(i) {
            out.push(',');
            out.push_str(&v.to_string());
        }
        out.push('\n');
    }
    Ok(out)
}

pub fn write_dataset_csv(data: &ClassDataset, path: &Path) -> Result<()> {
    fs::write(path, dataset_to_csv(data)?)?;
    Ok(())
}

/// Loads a dataset written by [`write_dataset_csv`], or any CSV with the
/// same schema line and `label,noisy,f0,...` header. Labels may be
/// arbitrary non-negative integers; they are remapped to contiguous class
/// ids in increasing order.
pub fn load_csv_dataset(path: &Path) -> Result<ClassDataset> {
    let text = fs::read_to_string(path)
        .map_err(|e| CoreError::Dataset(format!("{}: {e}", path.display())))?;
    let mut lines = text.lines().peekable();
    match lines.next() {
        Some(first) if first.trim() == DATASET_SCHEMA => {}
        Some(first) => {
            return Err(CoreError::Dataset(format!(
                "expected schema line '{DATASET_SCHEMA}', found '{first}'"
            )))
        }
        None => return Err(CoreError::Dataset("dataset file is empty".into())),
    }
    let mut domain_clip = None;
    if let Some(line) = lines.peek() {
        if let Some(rest) = line.strip_prefix("# clip ") {
            let parts: Vec<&str> = rest.split_whitespace().collect();
            if parts.len() != 2 {
                return Err(CoreError::Dataset("malformed clip comment".into()));
            }
            let lo: f64 = parts[0]
                .parse()
                .map_err(|_| CoreError::Dataset("malformed clip bound".into()))?;
            let hi: f64 = parts[1]
                .parse()
                .map_err(|_| CoreError::Dataset("malformed clip bound".into()))?;
            domain_clip = Some((lo, hi));
            lines.next();
        }
    }
    let header = lines
        .next()
        .ok_or_else(|| CoreError::Dataset("dataset file has no header row".into()))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 3 || cols[0] != "label" || cols[1] != "noisy" {
        return Err(CoreError::Dataset(format!(
            "unexpected dataset header '{header}'"
        )));
    }
    let d = cols.len() - 2;

    let mut raw_labels = Vec::new();
    let mut noisy = Vec::new();
    let mut features = Vec::new();
    for (lineno, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != d + 2 {
            return Err(CoreError::Dataset(format!(
                "row {} has {} fields, expected {}",
                lineno + 1,
                fields.len(),
                d + 2
            )));
        }
        let label: u64 = fields[0].parse().map_err(|_| {
            CoreError::Dataset(format!("row {}: bad label '{}'", lineno + 1, fields[0]))
        })?;
        raw_labels.push(label);
        noisy.push(match fields[1] {
            "0" => false,
            "1" => true,
            other => {
                return Err(CoreError::Dataset(format!(
                    "row {}: bad noisy flag '{other}'",
                    lineno + 1
                )))
            }
        });
        for f in &fields[2..] {
            let v: f64 = f.parse().map_err(|_| {
                CoreError::Dataset(format!("row {}: bad feature '{f}'", lineno + 1))
            })?;
            features.push(v);
        }
    }
    if raw_labels.is_empty() {
        return Err(CoreError::Dataset(format!(
            "{}: no data rows",
            path.display()
        )));
    }
    let (labels, num_classes) = remap_labels(&raw_labels);
    let data = ClassDataset {
        features,
        d,
        labels,
        num_classes,
        noisy,
        domain_clip,
    };
    data.validate()?;
    Ok(data)
}

/// Maps raw label values to contiguous ids in increasing value order.
fn remap_labels(raw: &[u64]) -> (Vec<usize>, usize) {
    let mut unique: Vec<u64> = raw.to_vec();
    unique.sort_unstable();
    unique.dedup();
    let labels = raw
        .iter()
        .map(|v| unique.binary_search(v).expect("value came from raw") )
        .collect();
    (labels, unique.len())
}

fn read_be_u32(bytes: &[u8], offset: usize, what: &str) -> Result<u32> {
    let end = offset + 4;
    if bytes.len() < end {
        return Err(CoreError::Dataset(format!("{what}: file truncated")));
    }
    Ok(u32::from_be_bytes(bytes[offset..end].try_into().unwrap()))
}

/// Loads an image dataset in IDX format (big-endian magic headers,
/// unsigned bytes). Pixels are scaled to `[0, 1]`, which also becomes the
/// feature-domain clip; labels are remapped to contiguous ids.
pub fn load_idx_dataset(images_path: &Path, labels_path: &Path) -> Result<ClassDataset> {
    let images = fs::read(images_path)
        .map_err(|e| CoreError::Dataset(format!("{}: {e}", images_path.display())))?;
    let labels = fs::read(labels_path)
        .map_err(|e| CoreError::Dataset(format!("{}: {e}", labels_path.display())))?;

    let magic = read_be_u32(&images, 0, "image file")?;
    if magic != IDX_IMAGES_MAGIC {
        return Err(CoreError::Dataset(format!(
            "image file magic {magic:#010x}, expected {IDX_IMAGES_MAGIC:#010x}"
        )));
    }
    let n = read_be_u32(&images, 4, "image file")? as usize;
    let rows = read_be_u32(&images, 8, "image file")? as usize;
    let cols = read_be_u32(&images, 12, "image file")? as usize;
    let d = rows * cols;
    if images.len() != 16 + n * d {
        return Err(CoreError::Dataset(format!(
            "image file holds {} bytes, header promises {}",
            images.len(),
            16 + n * d
        )));
    }

    let magic = read_be_u32(&labels, 0, "label file")?;
    if magic != IDX_LABELS_MAGIC {
        return Err(CoreError::Dataset(format!(
            "label file magic {magic:#010x}, expected {IDX_LABELS_MAGIC:#010x}"
        )));
    }
    let n_labels = read_be_u32(&labels, 4, "label file")? as usize;
    if labels.len() != 8 + n_labels {
        return Err(CoreError::Dataset(format!(
            "label file holds {} bytes, header promises {}",
            labels.len(),
            8 + n_labels
        )));
    }
    if n != n_labels {
        return Err(CoreError::Dataset(format!(
            "{n} images but {n_labels} labels"
        )));
    }
    if n == 0 {
        return Err(CoreError::Dataset("IDX files hold no samples".into()));
    }

    let features = images[16..].iter().map(|&b| f64::from(b) / 255.0).collect();
    let raw: Vec<u64> = labels[8..].iter().map(|&b| u64::from(b)).collect();
    let (labels, num_classes) = remap_labels(&raw);
    let data = ClassDataset {
        features,
        d,
        labels,
        num_classes,
        noisy: vec![false; n],
        domain_clip: Some((0.0, 1.0)),
    };
    data.validate()?;
    Ok(data)
}

/// Renders a training log as a long-format table: one row per
/// (window, class).
pub fn train_log_to_csv(log: &TrainLog) -> String {
    let mut out = String::from(TRAIN_METRICS_SCHEMA);
    out.push_str("\nepoch,class,err_nat,err_bdy,err_rob,adv_ratio,mean_alpha,mean_eps_i\n");
    for row in &log.rows {
        for class in &row.per_class {
            out.push_str(&format!(
                "{},{},{},{},{},{},{},{}\n",
                row.iter,
                class.class,
                fmt_opt(class.err_nat),
                fmt_opt(class.err_bdy),
                fmt_opt(class.err_rob),
                fmt_opt(class.adv_ratio),
                fmt_opt(Some(row.mean_alpha)),
                fmt_opt(Some(row.mean_eps)),
            ));
        }
    }
    out
}

/// Renders the clean/noisy adversary-lean series of a training log.
/// Groups without samples in a window are omitted.
pub fn adv_ratio_series_to_csv(log: &TrainLog) -> String {
    let mut out = String::from(ADV_RATIO_SCHEMA);
    out.push_str("\nepoch,group,adv_ratio\n");
    for row in &log.rows {
        for (group, value) in [
            ("clean", row.adv_ratio_clean),
            ("noisy", row.adv_ratio_noisy),
        ] {
            if let Some(v) = value {
                out.push_str(&format!("{},{group},{v}\n", row.iter));
            }
        }
    }
    out
}

/// Renders the sampling-experiment medians: one row per
/// (budget ratio, class).
pub fn case3_report_to_csv(report: &Case3Report) -> String {
    let mut out = String::from(SIMULATE_SCHEMA);
    out.push_str("\nrho,class,median_err_nat,median_err_rob,combined_worst_rob\n");
    for (g, &rho) in report.rho_grid.iter().enumerate() {
        for class in 0..2 {
            out.push_str(&format!(
                "{rho},{class},{},{},{}\n",
                report.median_nat[class][g],
                report.median_rob[class][g],
                report.combined_worst_rob[g],
            ));
        }
    }
    out
}
