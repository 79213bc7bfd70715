//! Report rows and their CSV serialization.
//!
//! CSV is the single report format. Floats are written with Rust's shortest
//! round-trip formatting, so `parse(serialize(row)) == row` exactly and
//! identical runs produce byte-identical files.

use std::fmt::Write as _;
use std::path::Path;

use crate::error::{HarnessError, Result};

/// Build identifier stamped into report rows.
pub fn build_id() -> String {
    format!("{}-{}", env!("CARGO_PKG_NAME"), env!("CARGO_PKG_VERSION"))
}

fn check_field(s: &str) -> Result<()> {
    if s.contains(',') || s.contains('\n') {
        return Err(HarnessError::Report(format!(
            "field {s:?} contains a delimiter"
        )));
    }
    Ok(())
}

fn split_line<const N: usize>(line: &str, what: &str) -> Result<[String; N]> {
    let parts: Vec<&str> = line.split(',').collect();
    if parts.len() != N {
        return Err(HarnessError::Report(format!(
            "{what}: expected {N} fields, got {} in {line:?}",
            parts.len()
        )));
    }
    Ok(std::array::from_fn(|i| parts[i].to_string()))
}

fn parse_f64(s: &str, what: &str) -> Result<f64> {
    s.parse()
        .map_err(|_| HarnessError::Report(format!("{what}: bad float {s:?}")))
}

fn parse_u64(s: &str, what: &str) -> Result<u64> {
    s.parse()
        .map_err(|_| HarnessError::Report(format!("{what}: bad integer {s:?}")))
}

/// One attack row of the accuracy table: original / adversarial / cleaned.
#[derive(Debug, Clone, PartialEq)]
pub struct Table1Row {
    pub dataset: String,
    pub attack: String,
    pub config_hash: String,
    pub build_id: String,
    pub acc_original: f64,
    pub acc_adversarial: f64,
    pub acc_cleaned: f64,
}

pub const TABLE1_HEADER: &str =
    "dataset,attack,config_hash,build_id,acc_original,acc_adversarial,acc_cleaned";

impl Table1Row {
    pub fn to_csv(&self) -> Result<String> {
        for f in [&self.dataset, &self.attack, &self.config_hash, &self.build_id] {
            check_field(f)?;
        }
        Ok(format!(
            "{},{},{},{},{},{},{}",
            self.dataset,
            self.attack,
            self.config_hash,
            self.build_id,
            self.acc_original,
            self.acc_adversarial,
            self.acc_cleaned
        ))
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let [dataset, attack, config_hash, build_id, a, b, c] =
            split_line::<7>(line, "table1")?;
        Ok(Table1Row {
            dataset,
            attack,
            config_hash,
            build_id,
            acc_original: parse_f64(&a, "table1")?,
            acc_adversarial: parse_f64(&b, "table1")?,
            acc_cleaned: parse_f64(&c, "table1")?,
        })
    }
}

/// One attack row of the two-term ablation: generator-only vs both terms.
#[derive(Debug, Clone, PartialEq)]
pub struct Table2Row {
    pub dataset: String,
    pub attack: String,
    pub config_hash: String,
    pub build_id: String,
    pub acc_defense_gan: f64,
    pub acc_cowboy: f64,
    /// Hashes over the restart starting points of each column; equal when
    /// the columns shared seeds as required.
    pub z0_hash_defense_gan: String,
    pub z0_hash_cowboy: String,
}

pub const TABLE2_HEADER: &str = "dataset,attack,config_hash,build_id,acc_defense_gan,acc_cowboy,z0_hash_defense_gan,z0_hash_cowboy";

impl Table2Row {
    pub fn to_csv(&self) -> Result<String> {
        for f in [
            &self.dataset,
            &self.attack,
            &self.config_hash,
            &self.build_id,
            &self.z0_hash_defense_gan,
            &self.z0_hash_cowboy,
        ] {
            check_field(f)?;
        }
        Ok(format!(
            "{},{},{},{},{},{},{},{}",
            self.dataset,
            self.attack,
            self.config_hash,
            self.build_id,
            self.acc_defense_gan,
            self.acc_cowboy,
            self.z0_hash_defense_gan,
            self.z0_hash_cowboy
        ))
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let [dataset, attack, config_hash, build_id, a, b, za, zb] =
            split_line::<8>(line, "table2")?;
        Ok(Table2Row {
            dataset,
            attack,
            config_hash,
            build_id,
            acc_defense_gan: parse_f64(&a, "table2")?,
            acc_cowboy: parse_f64(&b, "table2")?,
            z0_hash_defense_gan: za,
            z0_hash_cowboy: zb,
        })
    }
}

/// One score record of the violin export. The CSV schema is pinned to
/// exactly `dataset,source,index,score`; config hash and build id ride
/// along in memory only.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreRecord {
    pub dataset: String,
    /// "real" or the attack name.
    pub source: String,
    pub index: usize,
    pub score: f64,
    pub config_hash: String,
    pub build_id: String,
}

pub const VIOLIN_HEADER: &str = "dataset,source,index,score";

impl ScoreRecord {
    pub fn to_csv(&self) -> Result<String> {
        check_field(&self.dataset)?;
        check_field(&self.source)?;
        Ok(format!(
            "{},{},{},{}",
            self.dataset, self.source, self.index, self.score
        ))
    }

    pub fn from_csv(line: &str, config_hash: &str, build_id: &str) -> Result<Self> {
        let [dataset, source, index, score] = split_line::<4>(line, "violin")?;
        Ok(ScoreRecord {
            dataset,
            source,
            index: parse_u64(&index, "violin")? as usize,
            score: parse_f64(&score, "violin")?,
            config_hash: config_hash.to_string(),
            build_id: build_id.to_string(),
        })
    }
}

/// One checkpoint row of the GAN-quality sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub dataset: String,
    pub checkpoint_step: u64,
    pub config_hash: String,
    pub build_id: String,
    pub acc_adversarial: f64,
    pub acc_cleaned: f64,
    pub mean_score_real: f64,
    pub mean_score_adv: f64,
}

pub const SWEEP_HEADER: &str = "dataset,checkpoint_step,config_hash,build_id,acc_adversarial,acc_cleaned,mean_score_real,mean_score_adv";

impl SweepRow {
    pub fn to_csv(&self) -> Result<String> {
        check_field(&self.dataset)?;
        Ok(format!(
            "{},{},{},{},{},{},{},{}",
            self.dataset,
            self.checkpoint_step,
            self.config_hash,
            self.build_id,
            self.acc_adversarial,
            self.acc_cleaned,
            self.mean_score_real,
            self.mean_score_adv
        ))
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let [dataset, step, config_hash, build_id, a, b, c, d] =
            split_line::<8>(line, "sweep")?;
        Ok(SweepRow {
            dataset,
            checkpoint_step: parse_u64(&step, "sweep")?,
            config_hash,
            build_id,
            acc_adversarial: parse_f64(&a, "sweep")?,
            acc_cleaned: parse_f64(&b, "sweep")?,
            mean_score_real: parse_f64(&c, "sweep")?,
            mean_score_adv: parse_f64(&d, "sweep")?,
        })
    }
}

/// Long-form per-component attack record; one row per (sample, component).
#[derive(Debug, Clone, PartialEq)]
pub struct AttackRecord {
    pub index: usize,
    pub label: usize,
    pub attack: String,
    pub config_hash: String,
    pub component: usize,
    pub original: f64,
    pub adversarial: f64,
    pub success: bool,
}

pub const ATTACK_RECORD_HEADER: &str =
    "index,label,attack,config_hash,component,original,adversarial,success";

impl AttackRecord {
    pub fn to_csv(&self) -> Result<String> {
        check_field(&self.attack)?;
        Ok(format!(
            "{},{},{},{},{},{},{},{}",
            self.index,
            self.label,
            self.attack,
            self.config_hash,
            self.component,
            self.original,
            self.adversarial,
            self.success
        ))
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let [index, label, attack, config_hash, component, original, adversarial, success] =
            split_line::<8>(line, "attack record")?;
        Ok(AttackRecord {
            index: parse_u64(&index, "attack record")? as usize,
            label: parse_u64(&label, "attack record")? as usize,
            attack,
            config_hash,
            component: parse_u64(&component, "attack record")? as usize,
            original: parse_f64(&original, "attack record")?,
            adversarial: parse_f64(&adversarial, "attack record")?,
            success: match success.as_str() {
                "true" => true,
                "false" => false,
                other => {
                    return Err(HarnessError::Report(format!(
                        "attack record: bad bool {other:?}"
                    )))
                }
            },
        })
    }
}

/// Per-sample detection record.
#[derive(Debug, Clone, PartialEq)]
pub struct DetectionRecord {
    pub index: usize,
    /// "real" or the attack name.
    pub source: String,
    pub score: f64,
    pub flagged: bool,
}

pub const DETECTION_HEADER: &str = "index,source,score,flagged";

impl DetectionRecord {
    pub fn to_csv(&self) -> Result<String> {
        check_field(&self.source)?;
        Ok(format!(
            "{},{},{},{}",
            self.index, self.source, self.score, self.flagged
        ))
    }

    pub fn from_csv(line: &str) -> Result<Self> {
        let [index, source, score, flagged] = split_line::<4>(line, "detection")?;
        Ok(DetectionRecord {
            index: parse_u64(&index, "detection")? as usize,
            source,
            score: parse_f64(&score, "detection")?,
            flagged: flagged == "true",
        })
    }
}

/// Writes a header plus rows to a CSV file.
pub fn write_csv(path: &Path, header: &str, rows: &[String]) -> Result<()> {
    let mut out = String::with_capacity(header.len() + rows.iter().map(|r| r.len() + 1).sum::<usize>());
    writeln!(out, "{header}").unwrap();
    for row in rows {
        writeln!(out, "{row}").unwrap();
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, out)?;
    Ok(())
}

/// Reads a CSV written by [`write_csv`], validating the header.
pub fn read_csv(path: &Path, expected_header: &str) -> Result<Vec<String>> {
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h == expected_header => {}
        other => {
            return Err(HarnessError::Report(format!(
                "bad header in {}: {other:?}",
                path.display()
            )))
        }
    }
    Ok(lines.map(|l| l.to_string()).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table1_round_trip_preserves_floats_exactly() {
        let row = Table1Row {
            dataset: "two-gaussians".into(),
            attack: "fgsm".into(),
            config_hash: "abc123".into(),
            build_id: build_id(),
            acc_original: 0.995,
            acc_adversarial: 0.061224489795918366,
            acc_cleaned: 1.0 / 3.0,
        };
        let back = Table1Row::from_csv(&row.to_csv().unwrap()).unwrap();
        assert_eq!(row, back);
    }

    #[test]
    fn violin_schema_is_pinned() {
        assert_eq!(VIOLIN_HEADER, "dataset,source,index,score");
        let rec = ScoreRecord {
            dataset: "two-gaussians".into(),
            source: "real".into(),
            index: 5,
            score: 0.123456789012345678,
            config_hash: "h".into(),
            build_id: "b".into(),
        };
        let line = rec.to_csv().unwrap();
        assert_eq!(line.split(',').count(), 4);
        let back = ScoreRecord::from_csv(&line, "h", "b").unwrap();
        assert_eq!(rec, back);
    }

    #[test]
    fn fields_with_delimiters_are_rejected() {
        let rec = DetectionRecord {
            index: 0,
            source: "a,b".into(),
            score: 0.5,
            flagged: false,
        };
        assert!(rec.to_csv().is_err());
    }

    #[test]
    fn attack_and_sweep_rows_round_trip() {
        let a = AttackRecord {
            index: 3,
            label: 1,
            attack: "pgdm".into(),
            config_hash: "ff00".into(),
            component: 1,
            original: -0.25,
            adversarial: 0.75,
            success: true,
        };
        assert_eq!(AttackRecord::from_csv(&a.to_csv().unwrap()).unwrap(), a);

        let s = SweepRow {
            dataset: "two-gaussians".into(),
            checkpoint_step: 500,
            config_hash: "ff00".into(),
            build_id: build_id(),
            acc_adversarial: 0.1,
            acc_cleaned: 0.4,
            mean_score_real: 0.6758123,
            mean_score_adv: 0.2,
        };
        assert_eq!(SweepRow::from_csv(&s.to_csv().unwrap()).unwrap(), s);
    }
}
